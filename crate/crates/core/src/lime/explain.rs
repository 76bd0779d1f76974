use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::perturb::{fill_masked, proximity_weight, sample_perturbations};
use super::ridge::fit_weighted_ridge;
use super::segment::{GridShape, SegmentMap, SegmentScheme};
use crate::data::Label;
use crate::error::{Error, Result};
use crate::models::Network;
use crate::numerics::Tensor;
use crate::DOCUMENT_VERSION;

/// Perturbed images are scored in fixed-size chunks; the chunking never
/// depends on the worker count.
const SCORE_CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationConfig {
    /// Number of segments to select.
    pub k: usize,
    pub num_samples: usize,
    pub seed: u64,
    /// Width of the exponential proximity kernel.
    pub kernel_width: f64,
    /// Ridge penalty.
    pub lambda: f64,
    pub grid: GridShape,
}

impl Default for ExplanationConfig {
    fn default() -> Self {
        ExplanationConfig {
            k: 2,
            num_samples: 1000,
            seed: 0,
            kernel_width: 0.25,
            lambda: 1.0,
            grid: GridShape::default(),
        }
    }
}

impl ExplanationConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.k == 0 || self.k > d {
            return Err(Error::Config(format!(
                "k = {} must lie in [1, {d}] for {d} segments",
                self.k
            )));
        }
        if self.num_samples < d + 2 {
            return Err(Error::Config(format!(
                "num_samples = {} must be at least d + 2 = {}",
                self.num_samples,
                d + 2
            )));
        }
        if !(self.kernel_width > 0.0 && self.kernel_width.is_finite()) {
            return Err(Error::Config(format!("kernel_width must be positive, got {}", self.kernel_width)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Direction of a segment's surrogate weight relative to the predicted class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    /// Weight > 0: keeping the segment raises the predicted class probability.
    Supports,
    /// Weight < 0.
    Opposes,
    /// Weight exactly 0.
    Neutral,
}

impl Sign {
    pub fn of(weight: f64) -> Sign {
        if weight > 0.0 {
            Sign::Supports
        } else if weight < 0.0 {
            Sign::Opposes
        } else {
            Sign::Neutral
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentWeight {
    pub id: usize,
    pub weight: f64,
    pub selected: bool,
    /// Present for selected segments only.
    pub sign: Option<Sign>,
}

/// A local explanation of one prediction. Serializes to the versioned
/// explanation document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub version: u32,
    pub model_id: String,
    pub image_id: String,
    pub predicted_class: Label,
    /// Model probability of "parasitized" on the unperturbed image.
    pub probability: f64,
    pub config: ExplanationConfig,
    pub segments: Vec<SegmentWeight>,
    /// Selected segment ids, by descending |weight| (ties by id).
    pub ranking: Vec<usize>,
    pub intercept: f64,
    pub r2: f64,
}

impl Explanation {
    pub fn selected(&self) -> &[usize] {
        &self.ranking
    }

    pub fn sign_of(&self, segment: usize) -> Option<Sign> {
        self.segments.get(segment).and_then(|s| s.sign)
    }

    pub fn weights(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.weight).collect()
    }

    /// Canonical document bytes (pretty JSON plus trailing newline).
    pub fn to_document(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)
            .map_err(|e| Error::Data(format!("cannot encode explanation: {e}")))?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_document(bytes: &[u8]) -> Result<Self> {
        let exp: Explanation = serde_json::from_slice(bytes)
            .map_err(|e| Error::Data(format!("invalid explanation document: {e}")))?;
        if exp.version != DOCUMENT_VERSION {
            return Err(Error::Data(format!("unsupported explanation version {}", exp.version)));
        }
        Ok(exp)
    }
}

/// Anything that maps segment on/off vectors to a probability of
/// "parasitized".
pub trait MaskScorer: Sync {
    fn score_batch(&self, masks: &[&[u8]]) -> Result<Vec<f64>>;
}

/// Scores masks by filling switched-off segments of an image and running
/// a network on the result.
pub struct ImageScorer<'a> {
    network: &'a Network,
    image: &'a Tensor,
    segmap: &'a SegmentMap,
    means: Vec<Vec<f64>>,
}

impl<'a> ImageScorer<'a> {
    pub fn new(network: &'a Network, image: &'a Tensor, segmap: &'a SegmentMap) -> Result<Self> {
        if image.shape() != network.input_shape() {
            return Err(Error::Dimension(format!(
                "image shape {:?} does not match network input {:?}",
                image.shape(),
                network.input_shape()
            )));
        }
        let means = segmap.segment_means(image)?;
        Ok(ImageScorer {
            network,
            image,
            segmap,
            means,
        })
    }
}

impl MaskScorer for ImageScorer<'_> {
    fn score_batch(&self, masks: &[&[u8]]) -> Result<Vec<f64>> {
        let images: Vec<Tensor> = masks
            .iter()
            .map(|z| fill_masked(self.image, self.segmap, &self.means, z))
            .collect();
        let refs: Vec<&Tensor> = images.iter().collect();
        self.network.predict_batch(&refs)
    }
}

/// Explains `network`'s prediction on `image` over the segments of `segmap`.
pub fn explain(
    network: &Network,
    image: &Tensor,
    image_id: &str,
    segmap: &SegmentMap,
    config: &ExplanationConfig,
) -> Result<Explanation> {
    if segmap.scheme() != SegmentScheme::Grid(config.grid) {
        return Err(Error::Config(format!(
            "segment map {:?} does not match configured grid {}",
            segmap.scheme(),
            config.grid
        )));
    }
    let scorer = ImageScorer::new(network, image, segmap)?;
    explain_with_scorer(&scorer, &network.id, image_id, segmap.count(), config)
}

/// The model-agnostic core: sample masks, score them, weight by proximity,
/// fit the ridge surrogate and select the top-k segments.
pub fn explain_with_scorer(
    scorer: &dyn MaskScorer,
    model_id: &str,
    image_id: &str,
    d: usize,
    config: &ExplanationConfig,
) -> Result<Explanation> {
    config.validate(d)?;
    let z = sample_perturbations(d, config.num_samples, config.seed)?;

    let rows: Vec<&[u8]> = z.iter().collect();
    let scored: Vec<Vec<f64>> = rows
        .par_chunks(SCORE_CHUNK)
        .map(|chunk| scorer.score_batch(chunk))
        .collect::<Result<_>>()?;
    let probs: Vec<f64> = scored.into_iter().flatten().collect();
    if probs.len() != z.rows() {
        return Err(Error::Dimension(format!(
            "scorer returned {} probabilities for {} masks",
            probs.len(),
            z.rows()
        )));
    }

    let probability = probs[0];
    let predicted_class = Label::from_probability(probability);
    let target: Vec<f64> = match predicted_class {
        Label::Parasitized => probs,
        Label::Uninfected => probs.iter().map(|p| 1.0 - p).collect(),
    };
    let weights = z
        .iter()
        .map(|row| proximity_weight(row, config.kernel_width))
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_weighted_ridge(&z, &target, &weights, config.lambda)?;

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        fit.coefficients[b]
            .abs()
            .total_cmp(&fit.coefficients[a].abs())
            .then(a.cmp(&b))
    });
    order.truncate(config.k);

    let mut segments: Vec<SegmentWeight> = fit
        .coefficients
        .iter()
        .enumerate()
        .map(|(id, &weight)| SegmentWeight {
            id,
            weight,
            selected: false,
            sign: None,
        })
        .collect();
    for &id in &order {
        segments[id].selected = true;
        segments[id].sign = Some(Sign::of(segments[id].weight));
    }

    Ok(Explanation {
        version: DOCUMENT_VERSION,
        model_id: model_id.to_string(),
        image_id: image_id.to_string(),
        predicted_class,
        probability,
        config: config.clone(),
        segments,
        ranking: order,
        intercept: fit.intercept,
        r2: fit.r2,
    })
}
