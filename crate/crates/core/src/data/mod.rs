//! Image ingestion, resizing, stratified splitting and the synthetic
//! cell-image generator.

mod io;
mod split;
mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;

pub use io::{
    encode_png, index_dataset, load_dataset, load_image, resize_image, rgb8_from_tensor,
    tensor_from_rgb8, write_png, ImageEntry, DEFAULT_IMAGE_SIZE,
};
pub use split::{split, SplitRatios};
pub use synth::{synthesize_dataset, BACKGROUND_MAX};

/// The two cell-image classes. Training targets encode parasitized as 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Parasitized,
    Uninfected,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Parasitized, Label::Uninfected];

    pub fn name(self) -> &'static str {
        match self {
            Label::Parasitized => "parasitized",
            Label::Uninfected => "uninfected",
        }
    }

    /// Case-insensitive lookup by class name.
    pub fn from_name(name: &str) -> Option<Label> {
        Label::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(name))
    }

    pub fn target(self) -> f64 {
        match self {
            Label::Parasitized => 1.0,
            Label::Uninfected => 0.0,
        }
    }

    /// Thresholded at 0.5; a tie goes to parasitized.
    pub fn from_probability(p: f64) -> Label {
        if p >= 0.5 {
            Label::Parasitized
        } else {
            Label::Uninfected
        }
    }

    /// Row/column position in a confusion matrix.
    pub fn index(self) -> usize {
        match self {
            Label::Parasitized => 0,
            Label::Uninfected => 1,
        }
    }

    pub fn other(self) -> Label {
        match self {
            Label::Parasitized => Label::Uninfected,
            Label::Uninfected => Label::Parasitized,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a sample came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Source {
    File(PathBuf),
    Synthetic { seed: u64, index: usize },
}

/// One image: `[3, h, w]` pixels in `[0, 1]` with its label.
#[derive(Clone, Debug)]
pub struct ImageSample {
    pub id: String,
    pub pixels: Tensor,
    pub label: Label,
    pub source: Source,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    samples: Vec<ImageSample>,
    class_counts: BTreeMap<Label, usize>,
}

impl Dataset {
    pub fn new(samples: Vec<ImageSample>) -> Self {
        let mut class_counts = BTreeMap::new();
        for s in &samples {
            *class_counts.entry(s.label).or_insert(0) += 1;
        }
        Dataset {
            samples,
            class_counts,
        }
    }

    pub fn samples(&self) -> &[ImageSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<ImageSample> {
        self.samples
    }

    /// Per-class counts; classes with no samples are absent.
    pub fn class_counts(&self) -> &BTreeMap<Label, usize> {
        &self.class_counts
    }

    pub fn count(&self, label: Label) -> usize {
        self.class_counts.get(&label).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// First `n` samples (all of them if `n` exceeds the length).
    pub fn take(&self, n: usize) -> Dataset {
        Dataset::new(self.samples.iter().take(n).cloned().collect())
    }
}
