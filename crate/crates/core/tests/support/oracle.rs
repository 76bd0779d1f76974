// Mask-linear oracle classifiers with planted coefficients, used to check
// that the explainer recovers what was planted.

#![allow(dead_code)]

use limelens_core::data::Label;
use limelens_core::lime::{explain_with_scorer, ExplanationConfig, MaskScorer, Sign};
use limelens_core::numerics::sigmoid;
use limelens_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SEGMENTS: usize = 16;

/// p(parasitized | z) = sigmoid(bias + coef · z).
pub struct MaskLinear {
    pub coef: Vec<f64>,
    pub bias: f64,
}

impl MaskScorer for MaskLinear {
    fn score_batch(&self, masks: &[&[u8]]) -> Result<Vec<f64>> {
        Ok(masks
            .iter()
            .map(|z| sigmoid(self.bias + z.iter().zip(&self.coef).map(|(&v, a)| f64::from(v) * a).sum::<f64>()))
            .collect())
    }
}

/// Two dominant planted segments among small distractors; the unperturbed
/// logit lies in [-1, 1].
pub fn planted_pair(seed: u64) -> (MaskLinear, [usize; 2]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coef: Vec<f64> = (0..SEGMENTS).map(|_| rng.gen_range(-0.1..0.1)).collect();
    let first = rng.gen_range(0..SEGMENTS);
    let mut second = rng.gen_range(0..SEGMENTS - 1);
    if second >= first {
        second += 1;
    }
    for i in [first, second] {
        let magnitude = rng.gen_range(1.5..3.0);
        coef[i] = if rng.gen_bool(0.5) { magnitude } else { -magnitude };
    }
    let bias = -coef.iter().sum::<f64>() + rng.gen_range(-1.0..1.0);
    (MaskLinear { coef, bias }, [first, second])
}

/// True when the explanation selects exactly the planted pair and signs each
/// relative to the predicted class.
pub fn top2_trial(seed: u64) -> bool {
    let (oracle, planted) = planted_pair(seed);
    let config = ExplanationConfig { seed, ..ExplanationConfig::default() };
    let exp = explain_with_scorer(&oracle, "oracle", "planted", SEGMENTS, &config).unwrap();
    let mut selected = exp.ranking.clone();
    selected.sort_unstable();
    let mut expected = planted.to_vec();
    expected.sort_unstable();
    if selected != expected {
        return false;
    }
    planted.iter().all(|&i| {
        let toward_parasitized = oracle.coef[i] > 0.0;
        let supports = toward_parasitized == (exp.predicted_class == Label::Parasitized);
        exp.sign_of(i) == Some(if supports { Sign::Supports } else { Sign::Opposes })
    })
}

/// Ranks with ties averaged (1-based).
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Distinct nonzero planted coefficients on every segment; returns the
/// Spearman correlation of planted vs recovered magnitudes.
pub fn spearman_trial(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let coef: Vec<f64> = (0..SEGMENTS)
        .map(|_| {
            let m = rng.gen_range(0.05..0.5);
            if rng.gen_bool(0.5) { m } else { -m }
        })
        .collect();
    let bias = -0.5 * coef.iter().sum::<f64>();
    let oracle = MaskLinear { coef, bias };
    let config = ExplanationConfig { seed, ..ExplanationConfig::default() };
    let exp = explain_with_scorer(&oracle, "oracle", "planted", SEGMENTS, &config).unwrap();
    let planted: Vec<f64> = oracle.coef.iter().map(|c| c.abs()).collect();
    let recovered: Vec<f64> = exp.weights().iter().map(|c| c.abs()).collect();
    spearman(&planted, &recovered)
}
