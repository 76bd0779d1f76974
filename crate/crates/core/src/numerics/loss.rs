use crate::error::{Error, Result};

/// Probabilities are clamped to `[BCE_EPSILON, 1 - BCE_EPSILON]` before the log.
pub const BCE_EPSILON: f64 = 1e-7;

fn clamp(p: f64) -> f64 {
    p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON)
}

fn check_lengths(p: &[f64], y: &[f64]) -> Result<()> {
    if p.len() != y.len() || p.is_empty() {
        return Err(Error::Dimension(format!(
            "binary cross entropy needs equal non-empty lengths, got {} predictions and {} targets",
            p.len(),
            y.len()
        )));
    }
    Ok(())
}

/// Mean over the batch of `-[y ln p + (1 - y) ln(1 - p)]`.
pub fn binary_cross_entropy(p: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(p, y)?;
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = clamp(p);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / p.len() as f64)
}

/// Derivative of the mean loss with respect to each (unclamped) probability.
/// Zero where the clamp is engaged.
pub(crate) fn binary_cross_entropy_grad(p: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    check_lengths(p, y)?;
    let n = p.len() as f64;
    Ok(p.iter()
        .zip(y)
        .map(|(&p, &y)| {
            if p < BCE_EPSILON || p > 1.0 - BCE_EPSILON {
                0.0
            } else {
                (-y / p + (1.0 - y) / (1.0 - p)) / n
            }
        })
        .collect())
}
