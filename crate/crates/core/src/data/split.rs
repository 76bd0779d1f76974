use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Label};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios {}/{}/{} must lie in [0, 1] and sum to 1",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }

    /// `(train, val, test)` sizes for a class of `n` samples. Non-zero
    /// val/test ratios always receive at least one sample.
    fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let part = |r: f64| {
            if r > 0.0 {
                ((n as f64 * r).round() as usize).max(1)
            } else {
                0
            }
        };
        let (val, test) = (part(self.val), part(self.test));
        (n - val - test, val, test)
    }
}

/// Stratified, seeded train/val/test split. Each class is shuffled
/// independently and cut by the ratios; output order follows the shuffle.
pub fn split(dataset: &Dataset, ratios: SplitRatios, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    ratios.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for label in Label::ALL {
        let mut idx: Vec<usize> = dataset
            .samples()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == label)
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 3 {
            return Err(Error::Data(format!(
                "class {label} has {} samples; splitting needs at least 3",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let (n_train, n_val, _) = ratios.sizes(idx.len());
        let pick = |range: &[usize]| range.iter().map(|&i| dataset.samples()[i].clone()).collect::<Vec<_>>();
        train.extend(pick(&idx[..n_train]));
        val.extend(pick(&idx[n_train..n_train + n_val]));
        test.extend(pick(&idx[n_train + n_val..]));
    }
    Ok((Dataset::new(train), Dataset::new(val), Dataset::new(test)))
}
