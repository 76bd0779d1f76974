use std::fs;
use std::path::Path;

use image::RgbImage;

use super::explain::{Explanation, Sign};
use super::segment::SegmentMap;
use crate::data::{encode_png, rgb8_from_tensor};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const OVERLAY_SUFFIX: &str = ".explained.png";
pub const BLEND: f64 = 0.5;
const GREEN: [f64; 3] = [0.0, 1.0, 0.0];
const RED: [f64; 3] = [1.0, 0.0, 0.0];

/// Selected supporting segments blended green, opposing ones red; every
/// other pixel is the quantized input.
pub fn render_overlay_image(image: &Tensor, segmap: &SegmentMap, explanation: &Explanation) -> Result<RgbImage> {
    segmap.check_image(image)?;
    if explanation.segments.len() != segmap.count() {
        return Err(Error::Dimension(format!(
            "explanation has {} segments, segment map has {}",
            explanation.segments.len(),
            segmap.count()
        )));
    }
    let tint: Vec<Option<[f64; 3]>> = explanation
        .segments
        .iter()
        .map(|s| match (s.selected, s.sign) {
            (true, Some(Sign::Supports)) => Some(GREEN),
            (true, Some(Sign::Opposes)) => Some(RED),
            _ => None,
        })
        .collect();
    let mut blended = image.clone();
    let plane = segmap.width() * segmap.height();
    let data = blended.data_mut();
    for (p, s) in segmap.segment_of().enumerate() {
        if let Some(color) = tint[s] {
            for (ch, c) in color.iter().enumerate() {
                let v = &mut data[ch * plane + p];
                *v = (1.0 - BLEND) * *v + BLEND * c;
            }
        }
    }
    rgb8_from_tensor(&blended)
}

pub fn render_overlay_png(image: &Tensor, segmap: &SegmentMap, explanation: &Explanation) -> Result<Vec<u8>> {
    encode_png(&render_overlay_image(image, segmap, explanation)?)
}

pub fn render_overlay(image: &Tensor, segmap: &SegmentMap, explanation: &Explanation, out_path: &Path) -> Result<()> {
    let bytes = render_overlay_png(image, segmap, explanation)?;
    fs::write(out_path, bytes).map_err(|e| Error::io(out_path, e))
}
