use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Rows x columns of a rectangular segmentation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

impl Default for GridShape {
    fn default() -> Self {
        GridShape { rows: 8, cols: 8 }
    }
}

impl GridShape {
    /// Parses `"RxC"`, e.g. `"8x8"`.
    pub fn parse(text: &str) -> Result<Self> {
        let (r, c) = text
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Config(format!("grid {text:?} is not of the form RxC")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("grid {text:?} is not of the form RxC")))
        };
        Ok(GridShape {
            rows: parse(r)?,
            cols: parse(c)?,
        })
    }

    pub fn segments(&self) -> usize {
        self.rows * self.cols
    }
}

impl std::fmt::Display for GridShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum SegmentScheme {
    Grid(GridShape),
}

/// Partition of an image's pixels into `count` segments.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentMap {
    width: usize,
    height: usize,
    segment_of: Vec<u32>,
    count: usize,
    scheme: SegmentScheme,
}

/// Splits `len` into `parts` near-equal runs; earlier runs take the
/// remainder.
fn run_lengths(len: usize, parts: usize) -> Vec<usize> {
    let (base, rem) = (len / parts, len % parts);
    (0..parts).map(|i| base + usize::from(i < rem)).collect()
}

/// Near-equal rectangular tiles with row-major ids.
pub fn segment_grid(image: &Tensor, rows: usize, cols: usize) -> Result<SegmentMap> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::Dimension(format!("expected [c, h, w] image, got {s:?}")));
    }
    segment_grid_dims(s[1], s[2], GridShape { rows, cols })
}

pub fn segment_grid_dims(height: usize, width: usize, grid: GridShape) -> Result<SegmentMap> {
    let GridShape { rows, cols } = grid;
    if rows == 0 || cols == 0 || rows > height || cols > width {
        return Err(Error::Config(format!(
            "grid {grid} does not fit a {height}x{width} image"
        )));
    }
    let row_of: Vec<usize> = run_lengths(height, rows)
        .into_iter()
        .enumerate()
        .flat_map(|(i, n)| std::iter::repeat(i).take(n))
        .collect();
    let col_of: Vec<usize> = run_lengths(width, cols)
        .into_iter()
        .enumerate()
        .flat_map(|(i, n)| std::iter::repeat(i).take(n))
        .collect();
    let mut segment_of = Vec::with_capacity(height * width);
    for &r in &row_of {
        for &c in &col_of {
            segment_of.push((r * cols + c) as u32);
        }
    }
    Ok(SegmentMap {
        width,
        height,
        segment_of,
        count: rows * cols,
        scheme: SegmentScheme::Grid(grid),
    })
}

impl SegmentMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of segments `d`.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn scheme(&self) -> SegmentScheme {
        self.scheme
    }

    /// Segment id of the pixel at flat index `y * width + x`.
    pub fn segment_at(&self, pixel: usize) -> usize {
        self.segment_of[pixel] as usize
    }

    pub fn segment_of(&self) -> impl Iterator<Item = usize> + '_ {
        self.segment_of.iter().map(|&s| s as usize)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count];
        for s in self.segment_of() {
            sizes[s] += 1;
        }
        sizes
    }

    /// Flat pixel indices belonging to any of `segments`.
    pub fn pixels_of(&self, segments: &[usize]) -> Vec<usize> {
        let mut member = vec![false; self.count];
        for &s in segments {
            if s < self.count {
                member[s] = true;
            }
        }
        self.segment_of()
            .enumerate()
            .filter(|(_, s)| member[*s])
            .map(|(p, _)| p)
            .collect()
    }

    pub(crate) fn check_image(&self, image: &Tensor) -> Result<()> {
        let s = image.shape();
        if s.len() != 3 || s[1] != self.height || s[2] != self.width {
            return Err(Error::Dimension(format!(
                "image {s:?} does not match a {}x{} segment map",
                self.height, self.width
            )));
        }
        Ok(())
    }

    /// Per-segment, per-channel mean colour: `means[segment][channel]`.
    pub fn segment_means(&self, image: &Tensor) -> Result<Vec<Vec<f64>>> {
        self.check_image(image)?;
        let channels = image.shape()[0];
        let plane = self.width * self.height;
        let sizes = self.sizes();
        let mut means = vec![vec![0.0; channels]; self.count];
        for ch in 0..channels {
            let data = &image.data()[ch * plane..(ch + 1) * plane];
            for (p, s) in self.segment_of().enumerate() {
                means[s][ch] += data[p];
            }
        }
        for (m, &n) in means.iter_mut().zip(&sizes) {
            m.iter_mut().for_each(|v| *v /= n as f64);
        }
        Ok(means)
    }
}
