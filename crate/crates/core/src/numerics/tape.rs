use rand::{Rng, RngCore};

use super::layers::{
    activation_apply, activation_backward, avgpool2d_backward, avgpool2d_forward,
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, Layer,
};
use super::loss::binary_cross_entropy_grad;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Per-layer dropout masks; `None` for layers that are not dropout or for
/// dropout layers run with rate 0. Mask values are `0` or `1 / (1 - rate)`.
pub type DropoutMasks = Vec<Option<Vec<f64>>>;

/// How dropout layers behave during a forward pass.
pub enum DropoutMode<'a> {
    /// Identity (inference).
    Inference,
    /// Draw fresh inverted-dropout masks from the generator.
    Sample(&'a mut dyn RngCore),
    /// Reuse masks from an earlier pass.
    Fixed(&'a [Option<Vec<f64>>]),
}

#[derive(Clone, Debug)]
pub struct ParamGrad {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Gradient of the mean BCE loss. `layers[i]` is `Some` exactly for layers
/// with parameters.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub layers: Vec<Option<ParamGrad>>,
    pub input: Tensor,
}

fn check_mask(mask: &[f64], len: usize) -> Result<()> {
    if mask.len() != len {
        return Err(Error::Dimension(format!(
            "dropout mask has {} entries for an activation of {len}",
            mask.len()
        )));
    }
    Ok(())
}

fn apply_mask(input: &Tensor, mask: &[f64]) -> Tensor {
    let data = input.data().iter().zip(mask).map(|(x, m)| x * m).collect();
    Tensor::from_parts(input.shape().to_vec(), data)
}

fn layer_forward(
    layer: &Layer,
    index: usize,
    input: &Tensor,
    mode: &mut DropoutMode<'_>,
) -> Result<(Tensor, Option<Vec<f64>>)> {
    let out = match layer {
        Layer::Dense { weights, bias } => dense_forward(input, weights, bias)?,
        Layer::Conv2d { weights, bias } => conv2d_forward(input, weights, bias)?,
        Layer::AvgPool2d { window } => avgpool2d_forward(input, *window)?,
        Layer::Flatten => {
            let shape = layer.output_shape(input.shape())?;
            input.clone().reshape(&shape)?
        }
        Layer::Activation(kind) => activation_apply(input, *kind),
        Layer::Dropout { rate } => {
            let mask = match mode {
                DropoutMode::Inference => None,
                DropoutMode::Sample(_) if *rate == 0.0 => None,
                DropoutMode::Sample(rng) => {
                    let keep = 1.0 / (1.0 - rate);
                    Some(
                        (0..input.len())
                            .map(|_| if rng.gen::<f64>() < *rate { 0.0 } else { keep })
                            .collect::<Vec<_>>(),
                    )
                }
                DropoutMode::Fixed(masks) => masks.get(index).cloned().flatten(),
            };
            return Ok(match mask {
                Some(mask) => {
                    check_mask(&mask, input.len())?;
                    (apply_mask(input, &mask), Some(mask))
                }
                None => (input.clone(), None),
            });
        }
    };
    Ok((out, None))
}

/// Runs a layer stack forward without caching anything.
pub fn forward(layers: &[Layer], input: &Tensor, mut mode: DropoutMode<'_>) -> Result<Tensor> {
    let mut current = input.clone();
    for (i, layer) in layers.iter().enumerate() {
        current = layer_forward(layer, i, &current, &mut mode)?.0;
    }
    Ok(current)
}

struct Recorded {
    activations: Vec<Tensor>,
    masks: DropoutMasks,
}

/// Records a forward pass so that [`GradientTape::backward`] can run the
/// chain rule through it.
#[derive(Default)]
pub struct GradientTape {
    recorded: Option<Recorded>,
}

impl GradientTape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Forward pass with caching; returns the stack output.
    pub fn forward(
        &mut self,
        layers: &[Layer],
        input: &Tensor,
        mut mode: DropoutMode<'_>,
    ) -> Result<&Tensor> {
        let mut activations = Vec::with_capacity(layers.len() + 1);
        let mut masks = Vec::with_capacity(layers.len());
        activations.push(input.clone());
        for (i, layer) in layers.iter().enumerate() {
            let (out, mask) = layer_forward(layer, i, &activations[i], &mut mode)?;
            activations.push(out);
            masks.push(mask);
        }
        let rec = self.recorded.insert(Recorded { activations, masks });
        Ok(rec.activations.last().expect("input is always recorded"))
    }

    pub fn output(&self) -> Option<&Tensor> {
        self.recorded.as_ref().and_then(|r| r.activations.last())
    }

    pub fn masks(&self) -> Option<&[Option<Vec<f64>>]> {
        self.recorded.as_ref().map(|r| r.masks.as_slice())
    }

    /// Gradient of the mean binary cross entropy between the recorded output
    /// (probabilities, one per sample) and `targets`.
    pub fn backward(&self, layers: &[Layer], targets: &[f64]) -> Result<Gradients> {
        let rec = self
            .recorded
            .as_ref()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        if rec.activations.len() != layers.len() + 1 {
            return Err(Error::State(
                "recorded pass was made with a different layer stack".into(),
            ));
        }
        let output = rec.activations.last().expect("non-empty");
        let d_p = binary_cross_entropy_grad(output.data(), targets)?;
        let mut grad = Tensor::from_parts(output.shape().to_vec(), d_p);
        let mut layer_grads = vec![None; layers.len()];

        for (i, layer) in layers.iter().enumerate().rev() {
            let input = &rec.activations[i];
            grad = match layer {
                Layer::Dense { weights, .. } => {
                    let (d_in, d_w, d_b) = dense_backward(input, weights, &grad);
                    layer_grads[i] = Some(ParamGrad { weights: d_w, bias: d_b });
                    d_in
                }
                Layer::Conv2d { weights, .. } => {
                    let (d_in, d_w, d_b) = conv2d_backward(input, weights, &grad);
                    layer_grads[i] = Some(ParamGrad { weights: d_w, bias: d_b });
                    d_in
                }
                Layer::AvgPool2d { window } => avgpool2d_backward(input.shape(), *window, &grad),
                Layer::Flatten => grad.reshape(input.shape())?,
                Layer::Activation(kind) => {
                    activation_backward(input, &rec.activations[i + 1], *kind, &grad)
                }
                Layer::Dropout { .. } => match &rec.masks[i] {
                    Some(mask) => apply_mask(&grad, mask),
                    None => grad,
                },
            };
        }
        Ok(Gradients {
            layers: layer_grads,
            input: grad,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::layers::Activation;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    fn small_mlp() -> Vec<Layer> {
        vec![
            Layer::dense(t(&[3, 4], (0..12).map(|i| (i as f64 - 5.0) * 0.1).collect()), t(&[4], vec![0.1; 4])).unwrap(),
            Layer::Activation(Activation::Relu),
            Layer::dense(t(&[4, 1], vec![0.3, -0.2, 0.5, 0.1]), t(&[1], vec![0.0])).unwrap(),
            Layer::Activation(Activation::Sigmoid),
        ]
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let tape = GradientTape::new();
        assert!(matches!(tape.backward(&small_mlp(), &[1.0]), Err(Error::State(_))));
    }

    #[test]
    fn zero_input_kills_first_layer_weight_grad() {
        let layers = small_mlp();
        let mut tape = GradientTape::new();
        tape.forward(&layers, &Tensor::zeros(&[2, 3]), DropoutMode::Inference).unwrap();
        let g = tape.backward(&layers, &[1.0, 0.0]).unwrap();
        let first = g.layers[0].as_ref().unwrap();
        assert!(first.weights.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_sample_matches_single() {
        let layers = small_mlp();
        let x = t(&[1, 3], vec![0.4, -1.2, 2.0]);
        let xx = t(&[2, 3], vec![0.4, -1.2, 2.0, 0.4, -1.2, 2.0]);
        let mut tape = GradientTape::new();
        tape.forward(&layers, &x, DropoutMode::Inference).unwrap();
        let g1 = tape.backward(&layers, &[1.0]).unwrap();
        tape.forward(&layers, &xx, DropoutMode::Inference).unwrap();
        let g2 = tape.backward(&layers, &[1.0, 1.0]).unwrap();
        for (a, b) in g1.layers.iter().zip(&g2.layers) {
            if let (Some(a), Some(b)) = (a, b) {
                assert!(a.weights.max_abs_diff(&b.weights) < 1e-15);
                assert!(a.bias.max_abs_diff(&b.bias) < 1e-15);
            }
        }
    }

    #[test]
    fn fixed_masks_reproduce_sampled_pass() {
        use rand::SeedableRng;
        let mut layers = small_mlp();
        layers.insert(2, Layer::dropout(0.5).unwrap());
        let x = t(&[2, 3], vec![0.4, -1.2, 2.0, 1.0, 1.0, 1.0]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut tape = GradientTape::new();
        let sampled = tape.forward(&layers, &x, DropoutMode::Sample(&mut rng)).unwrap().clone();
        let masks = tape.masks().unwrap().to_vec();
        let replay = forward(&layers, &x, DropoutMode::Fixed(&masks)).unwrap();
        assert_eq!(sampled, replay);
    }
}
