//! Synthetic stand-in for thin-smear cell crops: a pink elliptical cell on a
//! near-black surround. Parasitized cells carry 1-3 dark purple dots;
//! uninfected cells carry 0-2 faint pale spots. Both classes draw the
//! background from the same distribution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, ImageSample, Label, Source};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Upper bound of background channel values.
pub const BACKGROUND_MAX: f64 = 0.015;

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    /// Squared normalized radius; `<= 1` inside.
    fn rho2(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2)
    }

    /// Point at normalized polar coordinates `(r, theta)` inside the ellipse.
    fn point(&self, r: f64, theta: f64) -> (f64, f64) {
        let (u, v) = (r * self.a * theta.cos(), r * self.b * theta.sin());
        (
            self.cx + u * self.cos - v * self.sin,
            self.cy + u * self.sin + v * self.cos,
        )
    }
}

struct Spot {
    x: f64,
    y: f64,
    radius: f64,
    color: [f64; 3],
}

fn generate(size: usize, label: Label, rng: &mut ChaCha8Rng) -> Tensor {
    let s = size as f64;
    let plane = size * size;
    let mut px = vec![0.0; 3 * plane];
    for v in px.iter_mut() {
        *v = rng.gen_range(0.0..BACKGROUND_MAX);
    }

    let a = s * rng.gen_range(0.27..0.40);
    let b = s * rng.gen_range(0.27..0.40);
    let reach = a.max(b);
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let cell = Ellipse {
        cx: rng.gen_range(reach + 0.5..s - reach - 0.5),
        cy: rng.gen_range(reach + 0.5..s - reach - 0.5),
        a,
        b,
        cos: angle.cos(),
        sin: angle.sin(),
    };
    let base: [f64; 3] = [
        rng.gen_range(0.78..0.95),
        rng.gen_range(0.45..0.62),
        rng.gen_range(0.62..0.80),
    ];

    let inner = a.min(b);
    let mut spots = Vec::new();
    let (count, radius, dark) = match label {
        Label::Parasitized => (rng.gen_range(1..=3), (s / 14.0).max(1.6), true),
        Label::Uninfected => (rng.gen_range(0..=2), (s / 18.0).max(1.2), false),
    };
    for _ in 0..count {
        let margin = ((radius + 1.0) / inner).min(0.9);
        let (x, y) = cell.point(rng.gen_range(0.0..1.0 - margin), rng.gen_range(0.0..std::f64::consts::TAU));
        let color = if dark {
            [
                rng.gen_range(0.30f64..0.42),
                rng.gen_range(0.08..0.16),
                rng.gen_range(0.40..0.52),
            ]
        } else {
            [
                (base[0] + 0.05).min(1.0),
                (base[1] + 0.08).min(1.0),
                (base[2] + 0.06).min(1.0),
            ]
        };
        spots.push(Spot { x, y, radius, color });
    }

    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let rho2 = cell.rho2(fx, fy);
            if rho2 > 1.0 {
                continue;
            }
            // membrane slightly darker than the interior
            let shade = 1.0 - 0.08 * rho2;
            let mut color = [base[0] * shade, base[1] * shade, base[2] * shade];
            for spot in &spots {
                if (fx - spot.x).powi(2) + (fy - spot.y).powi(2) <= spot.radius.powi(2) {
                    color = spot.color;
                }
            }
            for (ch, c) in color.iter().enumerate() {
                let noise = rng.gen_range(-0.02..0.02);
                px[ch * plane + y * size + x] = (c + noise).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::from_parts(vec![3, size, size], px)
}

/// Generates `n` images (`n / 2` per class, alternating labels starting with
/// parasitized). Each image draws from its own seeded stream, so image `i`
/// does not depend on `n`.
pub fn synthesize_dataset(n: usize, size: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::Config(format!(
            "synthetic dataset size must be even and positive, got {n}"
        )));
    }
    if size != 32 && size != 128 {
        return Err(Error::Config(format!(
            "synthetic image size must be 32 or 128, got {size}"
        )));
    }
    let samples = (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Parasitized } else { Label::Uninfected };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            ImageSample {
                id: format!("synth-{seed}-{i:05}"),
                pixels: generate(size, label, &mut rng),
                label,
                source: Source::Synthetic { seed, index: i },
            }
        })
        .collect();
    Ok(Dataset::new(samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn luminance(px: &Tensor, p: usize) -> f64 {
        let plane = px.shape()[1] * px.shape()[2];
        (0..3).map(|c| px.data()[c * plane + p]).sum::<f64>() / 3.0
    }

    fn background_fraction(px: &Tensor) -> f64 {
        let plane = px.shape()[1] * px.shape()[2];
        (0..plane).filter(|&p| luminance(px, p) < 0.02).count() as f64 / plane as f64
    }

    #[test]
    fn balanced_classes() {
        let d = synthesize_dataset(10, 32, 1).unwrap();
        assert_eq!(d.count(Label::Parasitized), 5);
        assert_eq!(d.count(Label::Uninfected), 5);
    }

    #[test]
    fn odd_count_rejected() {
        assert!(matches!(synthesize_dataset(7, 32, 1), Err(Error::Config(_))));
        assert!(synthesize_dataset(8, 64, 1).is_err());
    }

    #[test]
    fn seed_determinism() {
        let a = synthesize_dataset(6, 32, 42).unwrap();
        let b = synthesize_dataset(6, 32, 42).unwrap();
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert_eq!(x.pixels.data(), y.pixels.data());
        }
        let c = synthesize_dataset(6, 32, 43).unwrap();
        assert_ne!(a.samples()[0].pixels.data(), c.samples()[0].pixels.data());
    }

    #[test]
    fn background_fraction_in_band() {
        let d = synthesize_dataset(1000, 32, 5).unwrap();
        for s in d.samples() {
            let f = background_fraction(&s.pixels);
            assert!((0.3..=0.8).contains(&f), "{}: background fraction {f}", s.id);
        }
        let d = synthesize_dataset(20, 128, 5).unwrap();
        for s in d.samples() {
            let f = background_fraction(&s.pixels);
            assert!((0.3..=0.8).contains(&f), "{}: background fraction {f}", s.id);
        }
    }

    #[test]
    fn background_distribution_matches_across_classes() {
        let d = synthesize_dataset(400, 32, 11).unwrap();
        let mut hist = [[0usize; 4]; 2];
        for s in d.samples() {
            let plane = 32 * 32;
            for p in 0..plane {
                if luminance(&s.pixels, p) < 0.02 {
                    let v = s.pixels.data()[p];
                    let bin = ((v / BACKGROUND_MAX) * 4.0).floor().min(3.0) as usize;
                    hist[s.label.index()][bin] += 1;
                }
            }
        }
        for c in 0..2 {
            let total: usize = hist[c].iter().sum();
            for bin in 0..4 {
                let frac = hist[c][bin] as f64 / total as f64;
                assert!((frac - 0.25).abs() < 0.01, "class {c} bin {bin}: {frac}");
            }
        }
    }
}
