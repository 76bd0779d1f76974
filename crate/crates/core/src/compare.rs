//! Cross-model explanation comparison: pixel overlap of the selected
//! regions and how much of each selection falls on the dark background
//! surrounding a cell.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::lime::{explain, segment_grid_dims, Explanation, ExplanationConfig, SegmentMap};
use crate::metrics::{classification_report, confusion, MetricsReport};
use crate::models::Network;
use crate::numerics::Tensor;
use crate::DOCUMENT_VERSION;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub explanation: ExplanationConfig,
    /// Pixels whose mean channel value is below this count as background.
    pub luminance_threshold: f64,
    /// A selection is flagged when its border mass exceeds this.
    pub artifact_cutoff: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            explanation: ExplanationConfig::default(),
            luminance_threshold: 0.05,
            artifact_cutoff: 0.5,
        }
    }
}

/// |pixels(A) ∩ pixels(B)| / |pixels(A) ∪ pixels(B)| over selected
/// segments; 1.0 when both selections are empty.
pub fn segment_jaccard(a: &Explanation, b: &Explanation, segmap: &SegmentMap) -> Result<f64> {
    if a.image_id != b.image_id {
        return Err(Error::Data(format!(
            "explanations are for different images ({} vs {})",
            a.image_id, b.image_id
        )));
    }
    for e in [a, b] {
        if e.segments.len() != segmap.count() {
            return Err(Error::Dimension(format!(
                "explanation has {} segments, segment map has {}",
                e.segments.len(),
                segmap.count()
            )));
        }
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for s in segmap.segment_of() {
        let (in_a, in_b) = (a.segments[s].selected, b.segments[s].selected);
        inter += usize::from(in_a && in_b);
        union += usize::from(in_a || in_b);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Fraction of selected pixels whose luminance (channel mean) is below
/// `luminance_threshold`; 0.0 for an empty selection.
pub fn border_mass(
    explanation: &Explanation,
    image: &Tensor,
    segmap: &SegmentMap,
    luminance_threshold: f64,
) -> Result<f64> {
    let s = image.shape();
    if s.len() != 3 || s[1] != segmap.height() || s[2] != segmap.width() {
        return Err(Error::Dimension(format!(
            "image {s:?} does not match a {}x{} segment map",
            segmap.height(),
            segmap.width()
        )));
    }
    let pixels = segmap.pixels_of(explanation.selected());
    if pixels.is_empty() {
        return Ok(0.0);
    }
    let (channels, plane) = (s[0], s[1] * s[2]);
    let data = image.data();
    let dark = pixels
        .iter()
        .filter(|&&p| {
            let lum = (0..channels).map(|c| data[c * plane + p]).sum::<f64>() / channels as f64;
            lum < luminance_threshold
        })
        .count();
    Ok(dark as f64 / pixels.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub image_id: String,
    /// Ground truth, when known.
    pub label: Option<Label>,
    pub predicted_a: Label,
    pub predicted_b: Label,
    pub probability_a: f64,
    pub probability_b: f64,
    pub selected_a: Vec<usize>,
    pub selected_b: Vec<usize>,
    pub jaccard_selected_pixels: f64,
    pub border_mass_a: f64,
    pub border_mass_b: f64,
    pub artifact_flag_a: bool,
    pub artifact_flag_b: bool,
    pub agreement_of_prediction: bool,
    /// Paths of explanation artifacts written for this row, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact_a: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact_b: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub version: u32,
    pub model_a: String,
    pub model_b: String,
    pub config: CompareConfig,
    pub rows: Vec<ComparisonRow>,
    pub mean_jaccard: f64,
    pub artifact_rate_a: f64,
    pub artifact_rate_b: f64,
    /// Present when every row has a ground-truth label.
    pub metrics_a: Option<MetricsReport>,
    pub metrics_b: Option<MetricsReport>,
}

/// Explains one image with both models (same seed) and measures overlap
/// and border mass. Returns the row and both explanations.
pub fn compare_image(
    model_a: &Network,
    model_b: &Network,
    image: &Tensor,
    image_id: &str,
    label: Option<Label>,
    config: &CompareConfig,
) -> Result<(ComparisonRow, Explanation, Explanation)> {
    if model_a.input_shape() != model_b.input_shape() {
        return Err(Error::Config(format!(
            "models take different inputs ({:?} vs {:?})",
            model_a.input_shape(),
            model_b.input_shape()
        )));
    }
    let [_, h, w] = model_a.input_shape();
    let segmap = segment_grid_dims(h, w, config.explanation.grid)?;
    let exp_a = explain(model_a, image, image_id, &segmap, &config.explanation)?;
    let exp_b = explain(model_b, image, image_id, &segmap, &config.explanation)?;
    let row = compare_explanations(&exp_a, &exp_b, image, &segmap, label, config)?;
    Ok((row, exp_a, exp_b))
}

/// Builds a comparison row from two explanations of the same image.
pub fn compare_explanations(
    exp_a: &Explanation,
    exp_b: &Explanation,
    image: &Tensor,
    segmap: &SegmentMap,
    label: Option<Label>,
    config: &CompareConfig,
) -> Result<ComparisonRow> {
    let border_mass_a = border_mass(exp_a, image, segmap, config.luminance_threshold)?;
    let border_mass_b = border_mass(exp_b, image, segmap, config.luminance_threshold)?;
    Ok(ComparisonRow {
        image_id: exp_a.image_id.clone(),
        label,
        predicted_a: exp_a.predicted_class,
        predicted_b: exp_b.predicted_class,
        probability_a: exp_a.probability,
        probability_b: exp_b.probability,
        selected_a: exp_a.ranking.clone(),
        selected_b: exp_b.ranking.clone(),
        jaccard_selected_pixels: segment_jaccard(exp_a, exp_b, segmap)?,
        border_mass_a,
        border_mass_b,
        artifact_flag_a: border_mass_a > config.artifact_cutoff,
        artifact_flag_b: border_mass_b > config.artifact_cutoff,
        agreement_of_prediction: exp_a.predicted_class == exp_b.predicted_class,
        artifact_a: None,
        artifact_b: None,
    })
}

pub fn compare_models(
    model_a: &Network,
    model_b: &Network,
    dataset: &Dataset,
    config: &CompareConfig,
) -> Result<ComparisonReport> {
    if dataset.is_empty() {
        return Err(Error::Data("comparison dataset is empty".into()));
    }
    let rows = dataset
        .samples()
        .iter()
        .map(|s| compare_image(model_a, model_b, &s.pixels, &s.id, Some(s.label), config).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    ComparisonReport::from_rows(&model_a.id, &model_b.id, config.clone(), rows)
}

impl ComparisonReport {
    /// Builds the report and its aggregates from per-image rows.
    pub fn from_rows(model_a: &str, model_b: &str, config: CompareConfig, rows: Vec<ComparisonRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data("comparison has no rows".into()));
        }
        let n = rows.len() as f64;
        let rate = |f: fn(&ComparisonRow) -> bool| rows.iter().filter(|r| f(r)).count() as f64 / n;
        let truths: Option<Vec<Label>> = rows.iter().map(|r| r.label).collect();
        let metrics = |pick: fn(&ComparisonRow) -> Label| -> Result<Option<MetricsReport>> {
            match &truths {
                Some(t) => {
                    let preds: Vec<Label> = rows.iter().map(pick).collect();
                    Ok(Some(classification_report(&confusion(&preds, t)?)?))
                }
                None => Ok(None),
            }
        };
        Ok(ComparisonReport {
            version: DOCUMENT_VERSION,
            model_a: model_a.to_string(),
            model_b: model_b.to_string(),
            mean_jaccard: rows.iter().map(|r| r.jaccard_selected_pixels).sum::<f64>() / n,
            artifact_rate_a: rate(|r| r.artifact_flag_a),
            artifact_rate_b: rate(|r| r.artifact_flag_b),
            metrics_a: metrics(|r| r.predicted_a)?,
            metrics_b: metrics(|r| r.predicted_b)?,
            config,
            rows,
        })
    }

    pub fn to_document(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)
            .map_err(|e| Error::Data(format!("cannot encode comparison report: {e}")))?;
        bytes.push(b'\n');
        Ok(bytes)
    }
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "A = {}    B = {}", self.model_a, self.model_b)?;
        writeln!(
            f,
            "{:<24}{:>12}{:>12}{:>9}{:>9}{:>9}{:>7}{:>7}",
            "image", "pred A", "pred B", "jaccard", "bmass A", "bmass B", "flagA", "flagB"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<24}{:>12}{:>12}{:>9.3}{:>9.3}{:>9.3}{:>7}{:>7}",
                r.image_id,
                r.predicted_a.name(),
                r.predicted_b.name(),
                r.jaccard_selected_pixels,
                r.border_mass_a,
                r.border_mass_b,
                if r.artifact_flag_a { "yes" } else { "-" },
                if r.artifact_flag_b { "yes" } else { "-" },
            )?;
        }
        writeln!(f, "mean jaccard      {:.4}", self.mean_jaccard)?;
        writeln!(f, "artifact rate A   {:.4}", self.artifact_rate_a)?;
        write!(f, "artifact rate B   {:.4}", self.artifact_rate_b)?;
        if let (Some(a), Some(b)) = (&self.metrics_a, &self.metrics_b) {
            write!(
                f,
                "\nweighted f1       A {:.4}   B {:.4}",
                a.weighted_avg.f1, b.weighted_avg.f1
            )?;
        }
        Ok(())
    }
}
