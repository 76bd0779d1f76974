use super::layers::Layer;
use super::tape::Gradients;
use crate::error::{Error, Result};

/// Stochastic gradient descent with classical momentum:
/// `v <- momentum * v + g; theta <- theta - lr * v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum {momentum} outside [0, 1)")));
        }
        Ok(Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn velocity(&self, layer: usize) -> Option<(&[f64], &[f64])> {
        self.velocity
            .get(layer)
            .and_then(|v| v.as_ref())
            .map(|(w, b)| (w.as_slice(), b.as_slice()))
    }

    pub fn step(&mut self, layers: &mut [Layer], grads: &Gradients) -> Result<()> {
        if grads.layers.len() != layers.len() {
            return Err(Error::Dimension(format!(
                "{} gradient slots for {} layers",
                grads.layers.len(),
                layers.len()
            )));
        }
        for (layer, grad) in layers.iter().zip(&grads.layers) {
            match (layer.params(), grad) {
                (Some((w, b)), Some(g)) if w.shape() == g.weights.shape() && b.shape() == g.bias.shape() => {}
                (None, None) => {}
                _ => {
                    return Err(Error::Dimension(
                        "gradient shapes do not match parameters".into(),
                    ))
                }
            }
        }
        if self.velocity.len() != layers.len() {
            self.velocity = layers
                .iter()
                .map(|l| l.params().map(|(w, b)| (vec![0.0; w.len()], vec![0.0; b.len()])))
                .collect();
        }
        let (lr, mu) = (self.lr, self.momentum);
        for ((layer, grad), vel) in layers.iter_mut().zip(&grads.layers).zip(&mut self.velocity) {
            let (Some((w, b)), Some(g), Some((vw, vb))) = (layer.params_mut(), grad, vel) else {
                continue;
            };
            update(w.data_mut(), g.weights.data(), vw, lr, mu);
            update(b.data_mut(), g.bias.data(), vb, lr, mu);
        }
        Ok(())
    }
}

fn update(theta: &mut [f64], grad: &[f64], vel: &mut [f64], lr: f64, mu: f64) {
    for ((t, g), v) in theta.iter_mut().zip(grad).zip(vel.iter_mut()) {
        *v = mu * *v + g;
        *t -= lr * *v;
    }
}
