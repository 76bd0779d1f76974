//! LIME-style local explanations over a segment grid.
//!
//! Pipeline: segment the image, sample binary keep/drop vectors, fill
//! dropped segments with their mean colour, score each perturbed image,
//! weight samples by an exponential kernel on the fraction of dropped
//! segments, fit a weighted ridge surrogate and keep the `k` segments with
//! the largest absolute coefficients. Scores are taken for the predicted
//! class, so a positive weight always means "supports the prediction".

mod explain;
mod perturb;
mod render;
mod ridge;
mod segment;

pub use explain::{
    explain, explain_with_scorer, Explanation, ExplanationConfig, ImageScorer, MaskScorer,
    SegmentWeight, Sign,
};
pub use perturb::{apply_mask, proximity_weight, sample_perturbations, PerturbationMatrix};
pub use render::{render_overlay, render_overlay_image, render_overlay_png, BLEND, OVERLAY_SUFFIX};
pub use ridge::{fit_weighted_ridge, RidgeFit};
pub use segment::{segment_grid, segment_grid_dims, GridShape, SegmentMap, SegmentScheme};
