use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::Network;
use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::numerics::{binary_cross_entropy, DropoutMode, GradientTape, Sgd, Tensor};

/// Evaluation batches are independent of the training batch size.
const EVAL_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 32,
            max_epochs: 150,
            patience: 10,
            lr: 0.01,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch_size, patience and max_epochs must all be at least 1".into(),
            ));
        }
        // lr/momentum ranges are checked by the optimizer
        Sgd::new(self.lr, self.momentum).map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochStats>,
    pub stopped_epoch: usize,
    /// Epoch with the lowest validation loss; its weights are returned.
    pub best_epoch: usize,
}

/// Patience-based early stopping on validation loss. An epoch counts as an
/// improvement only if its loss is strictly below the best so far.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    /// Records an epoch's validation loss; returns `true` when training
    /// should stop after this epoch.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        match self.best {
            Some((_, best)) if val_loss >= best => self.stale += 1,
            _ => {
                self.best = Some((epoch, val_loss));
                self.stale = 0;
            }
        }
        self.stale >= self.patience
    }

    pub fn is_best(&self, epoch: usize) -> bool {
        self.best.is_some_and(|(e, _)| e == epoch)
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }
}

fn check_dataset(network: &Network, data: &Dataset, what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Data(format!("{what} set is empty")));
    }
    let shape = network.input_shape();
    if let Some(bad) = data.samples().iter().find(|s| s.pixels.shape() != shape) {
        return Err(Error::Dimension(format!(
            "{what} sample {} has shape {:?}, network expects {shape:?}",
            bad.id,
            bad.pixels.shape()
        )));
    }
    Ok(())
}

fn batch_of(data: &Dataset, indices: &[usize]) -> Result<(Tensor, Vec<f64>)> {
    let samples = data.samples();
    let images: Vec<&Tensor> = indices.iter().map(|&i| &samples[i].pixels).collect();
    let targets = indices.iter().map(|&i| samples[i].label.target()).collect();
    Ok((Tensor::stack(&images)?, targets))
}

/// Mean inference-mode BCE and accuracy over a dataset.
pub fn evaluate_loss(network: &Network, data: &Dataset) -> Result<(f64, f64)> {
    check_dataset(network, data, "evaluation")?;
    let order: Vec<usize> = (0..data.len()).collect();
    let (mut loss_sum, mut correct) = (0.0, 0usize);
    for chunk in order.chunks(EVAL_BATCH) {
        let (x, y) = batch_of(data, chunk)?;
        let p = network.probabilities(&x)?;
        loss_sum += binary_cross_entropy(&p, &y)? * chunk.len() as f64;
        correct += p
            .iter()
            .zip(chunk)
            .filter(|(&p, &i)| Label::from_probability(p) == data.samples()[i].label)
            .count();
    }
    let n = data.len() as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

pub fn train(
    network: &Network,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainingConfig,
) -> Result<(Network, TrainingHistory)> {
    train_with_observer(network, train_set, val_set, config, |_| {})
}

/// Mini-batch SGD on mean BCE with per-epoch seeded shuffling and early
/// stopping; returns the weights of the best validation epoch.
pub fn train_with_observer(
    network: &Network,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainingConfig,
    mut observer: impl FnMut(&EpochStats),
) -> Result<(Network, TrainingHistory)> {
    config.validate()?;
    check_dataset(network, train_set, "training")?;
    check_dataset(network, val_set, "validation")?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut current = network.clone();
    let mut best = network.clone();
    let mut sgd = Sgd::new(config.lr, config.momentum)?;
    let mut stopper = EarlyStopping::new(config.patience);
    let mut tape = GradientTape::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::new();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let (x, y) = batch_of(train_set, chunk)?;
            let p = tape.forward(current.layers(), &x, DropoutMode::Sample(&mut rng))?;
            loss_sum += binary_cross_entropy(p.data(), &y)? * chunk.len() as f64;
            let grads = tape.backward(current.layers(), &y)?;
            sgd.step(current.layers_mut(), &grads)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let (val_loss, val_accuracy) = evaluate_loss(&current, val_set)?;
        if !val_loss.is_finite() || !train_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "loss diverged at epoch {epoch}; try a smaller learning rate"
            )));
        }
        let stats = EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        };
        observer(&stats);
        epochs.push(stats);

        let stop = stopper.observe(epoch, val_loss);
        if stopper.is_best(epoch) {
            best = current.clone();
        }
        if stop {
            break;
        }
    }

    let history = TrainingHistory {
        stopped_epoch: epochs.len(),
        best_epoch: stopper.best_epoch().expect("at least one epoch ran"),
        epochs,
    };
    Ok((best, history))
}
