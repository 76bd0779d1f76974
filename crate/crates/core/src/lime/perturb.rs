use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::segment::SegmentMap;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Binary `rows x d` matrix of segment on/off vectors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PerturbationMatrix {
    rows: usize,
    d: usize,
    data: Vec<u8>,
}

impl PerturbationMatrix {
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if d == 0 || rows.iter().any(|r| r.len() != d || r.iter().any(|&v| v > 1)) {
            return Err(Error::Dimension(
                "perturbation rows must be non-empty, equal length and binary".into(),
            ));
        }
        Ok(PerturbationMatrix {
            rows: rows.len(),
            d,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u8]> {
        self.data.chunks_exact(self.d)
    }
}

/// Row 0 is all ones (the unperturbed instance); every other entry is an
/// independent fair coin from a generator seeded with `seed`.
pub fn sample_perturbations(d: usize, num_samples: usize, seed: u64) -> Result<PerturbationMatrix> {
    if d == 0 {
        return Err(Error::Config("need at least one segment".into()));
    }
    if num_samples < d + 2 {
        return Err(Error::Config(format!(
            "{num_samples} samples cannot identify {d} segment weights (need at least {})",
            d + 2
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![1u8; d];
    data.extend((0..(num_samples - 1) * d).map(|_| u8::from(rng.gen::<bool>())));
    Ok(PerturbationMatrix {
        rows: num_samples,
        d,
        data,
    })
}

/// Replaces switched-off segments with their own mean colour.
pub(crate) fn fill_masked(image: &Tensor, segmap: &SegmentMap, means: &[Vec<f64>], z: &[u8]) -> Tensor {
    let mut out = image.clone();
    let plane = segmap.width() * segmap.height();
    let channels = image.shape()[0];
    let data = out.data_mut();
    for (p, s) in segmap.segment_of().enumerate() {
        if z[s] == 0 {
            for ch in 0..channels {
                data[ch * plane + p] = means[s][ch];
            }
        }
    }
    out
}

pub fn apply_mask(image: &Tensor, segmap: &SegmentMap, z: &[u8]) -> Result<Tensor> {
    if z.len() != segmap.count() {
        return Err(Error::Dimension(format!(
            "mask has {} entries for {} segments",
            z.len(),
            segmap.count()
        )));
    }
    let means = segmap.segment_means(image)?;
    Ok(fill_masked(image, segmap, &means, z))
}

/// `exp(-D^2 / sigma^2)` where `D` is the fraction of switched-off segments.
pub fn proximity_weight(z: &[u8], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("kernel width must be positive, got {sigma}")));
    }
    if z.is_empty() {
        return Err(Error::Dimension("empty mask".into()));
    }
    let zeros = z.iter().filter(|&&v| v == 0).count();
    let dist = zeros as f64 / z.len() as f64;
    Ok((-(dist * dist) / (sigma * sigma)).exp())
}
