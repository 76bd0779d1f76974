use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};
use crate::numerics::{forward, Activation, DropoutMode, Layer, Tensor};

/// Probability at or above which the prediction is "parasitized".
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Output-unit encoding: 1 is parasitized, 0 is uninfected.
pub const CLASS_MAP: [(u8, Label); 2] = [(1, Label::Parasitized), (0, Label::Uninfected)];

/// Images fed to either network are square RGB at one of these sizes.
const SUPPORTED_SIZES: [usize; 2] = [32, 128];

const MLP_HIDDEN: [usize; 3] = [128, 128, 128];
const CNN_CHANNELS: [usize; 5] = [32, 64, 128, 256, 512];
const CNN_HIDDEN: [usize; 2] = [1024, 1024];
const DROPOUT_RATE: f64 = 0.5;
const KERNEL: usize = 3;
const POOL: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Mlp,
    Cnn,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Mlp => "mlp",
            Architecture::Cnn => "cnn",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "mlp" => Some(Architecture::Mlp),
            "cnn" => Some(Architecture::Cnn),
            _ => None,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Layer blueprint before parameters are drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Block {
    Dense(usize, Activation),
    Conv(usize, Activation),
    Pool,
    Dropout(f64),
    Flatten,
}

fn blueprint(arch: Architecture) -> Vec<Block> {
    let mut blocks = Vec::new();
    match arch {
        Architecture::Mlp => {
            blocks.push(Block::Flatten);
            blocks.extend(MLP_HIDDEN.iter().map(|&u| Block::Dense(u, Activation::Relu)));
        }
        Architecture::Cnn => {
            for &c in &CNN_CHANNELS {
                blocks.push(Block::Conv(c, Activation::Relu));
                blocks.push(Block::Pool);
            }
            blocks.push(Block::Flatten);
            blocks.extend(CNN_HIDDEN.iter().map(|&u| Block::Dense(u, Activation::Relu)));
        }
    }
    blocks.push(Block::Dropout(DROPOUT_RATE));
    blocks.push(Block::Dense(1, Activation::Sigmoid));
    blocks
}

fn check_input_shape(arch: Architecture, shape: [usize; 3]) -> Result<()> {
    let [c, h, w] = shape;
    if c != 3 || h != w || !SUPPORTED_SIZES.contains(&h) {
        return Err(Error::Config(format!(
            "unsupported {arch} input shape {shape:?}; expected [3, 32, 32] or [3, 128, 128]"
        )));
    }
    Ok(())
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], limit: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("finite draws")
}

/// He-uniform for ReLU layers, Glorot-uniform otherwise; zero biases.
fn init_limit(act: Activation, fan_in: usize, fan_out: usize) -> f64 {
    match act {
        Activation::Relu => (6.0 / fan_in as f64).sqrt(),
        Activation::Sigmoid => (6.0 / (fan_in + fan_out) as f64).sqrt(),
    }
}

fn instantiate(arch: Architecture, input_shape: [usize; 3], seed: u64) -> Result<Vec<Layer>> {
    check_input_shape(arch, input_shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape = vec![1, input_shape[0], input_shape[1], input_shape[2]];
    let mut layers = Vec::new();
    for block in blueprint(arch) {
        let start = layers.len();
        match block {
            Block::Dense(units, act) => {
                let fan_in = shape[1];
                let w = uniform(&mut rng, &[fan_in, units], init_limit(act, fan_in, units));
                layers.push(Layer::dense(w, Tensor::zeros(&[units]))?);
                layers.push(Layer::Activation(act));
            }
            Block::Conv(channels, act) => {
                let k2 = KERNEL * KERNEL;
                let limit = init_limit(act, shape[1] * k2, channels * k2);
                let w = uniform(&mut rng, &[channels, shape[1], KERNEL, KERNEL], limit);
                layers.push(Layer::conv2d(w, Tensor::zeros(&[channels]))?);
                layers.push(Layer::Activation(act));
            }
            Block::Pool => layers.push(Layer::AvgPool2d { window: POOL }),
            Block::Dropout(rate) => layers.push(Layer::dropout(rate)?),
            Block::Flatten => layers.push(Layer::Flatten),
        }
        for layer in &layers[start..] {
            shape = layer.output_shape(&shape)?;
        }
    }
    Ok(layers)
}

/// A trained or freshly initialized classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub id: String,
    architecture: Architecture,
    input_shape: [usize; 3],
    layers: Vec<Layer>,
    seed: u64,
}

/// Flatten, three Dense(128)+ReLU, Dropout(0.5), Dense(1)+Sigmoid.
pub fn build_mlp(input_shape: [usize; 3], seed: u64) -> Result<Network> {
    Network::build(Architecture::Mlp, input_shape, seed)
}

/// Five Conv(3x3, stride 1, SAME)+ReLU / AvgPool(2x2) blocks with 32..512
/// channels, then two Dense(1024)+ReLU, Dropout(0.5), Dense(1)+Sigmoid.
pub fn build_cnn(input_shape: [usize; 3], seed: u64) -> Result<Network> {
    Network::build(Architecture::Cnn, input_shape, seed)
}

impl Network {
    pub fn build(architecture: Architecture, input_shape: [usize; 3], seed: u64) -> Result<Self> {
        let layers = instantiate(architecture, input_shape, seed)?;
        Ok(Network {
            id: format!("{architecture}-{seed}"),
            architecture,
            input_shape,
            layers,
            seed,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Replaces the parameters of every Dense/Conv layer, in order. Shapes
    /// must match the existing ones.
    pub fn set_parameters(&mut self, params: Vec<(Tensor, Tensor)>) -> Result<()> {
        let mut params = params.into_iter();
        for layer in &mut self.layers {
            if let Some((w, b)) = layer.params_mut() {
                let (nw, nb) = params
                    .next()
                    .ok_or_else(|| Error::Dimension("too few parameter tensors".into()))?;
                if nw.shape() != w.shape() || nb.shape() != b.shape() {
                    return Err(Error::Dimension(format!(
                        "parameter shapes {:?}/{:?} do not match {:?}/{:?}",
                        nw.shape(),
                        nb.shape(),
                        w.shape(),
                        b.shape()
                    )));
                }
                *w = nw;
                *b = nb;
            }
        }
        if params.next().is_some() {
            return Err(Error::Dimension("too many parameter tensors".into()));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params())
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// Layer-by-layer description, with each Dense/Conv merged with its
    /// following activation, e.g. `Conv2D(32, 3x3, 1, ReLU)`.
    pub fn summary(&self) -> Vec<String> {
        let mut lines = Vec::new();
        let mut iter = self.layers.iter().peekable();
        while let Some(layer) = iter.next() {
            let act = |iter: &mut std::iter::Peekable<std::slice::Iter<'_, Layer>>| match iter.peek() {
                Some(Layer::Activation(a)) => {
                    let name = a.name();
                    iter.next();
                    name
                }
                _ => "linear",
            };
            let line = match layer {
                Layer::Dense { weights, .. } => {
                    let units = weights.shape()[1];
                    format!("Dense({units}, {})", act(&mut iter))
                }
                Layer::Conv2d { weights, .. } => {
                    let s = weights.shape();
                    format!("Conv2D({}, {}x{}, 1, {})", s[0], s[2], s[3], act(&mut iter))
                }
                Layer::AvgPool2d { window } => format!("AvgPool2D({window}x{window})"),
                Layer::Dropout { rate } => format!("Dropout({rate})"),
                Layer::Flatten => "Flatten".to_string(),
                Layer::Activation(a) => a.name().to_string(),
            };
            lines.push(line);
        }
        lines
    }

    /// Checks the layer stack against the architecture's blueprint.
    pub fn validate(&self) -> Result<()> {
        check_input_shape(self.architecture, self.input_shape)?;
        let reference = instantiate(self.architecture, self.input_shape, 0)?;
        let same = reference.len() == self.layers.len()
            && reference.iter().zip(&self.layers).all(|(r, l)| match (r, l) {
                (Layer::Dense { weights: a, .. }, Layer::Dense { weights: b, .. })
                | (Layer::Conv2d { weights: a, .. }, Layer::Conv2d { weights: b, .. }) => {
                    a.shape() == b.shape()
                }
                _ => r == l,
            });
        if !same {
            return Err(Error::Config(format!(
                "layer stack does not match the {} blueprint",
                self.architecture
            )));
        }
        Ok(())
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        if image.shape() != self.input_shape {
            return Err(Error::Dimension(format!(
                "image shape {:?} does not match network input {:?}",
                image.shape(),
                self.input_shape
            )));
        }
        if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("pixel values must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Inference-mode probabilities for a `[batch, c, h, w]` tensor.
    pub fn probabilities(&self, batch: &Tensor) -> Result<Vec<f64>> {
        Ok(forward(&self.layers, batch, DropoutMode::Inference)?.into_data())
    }

    /// Inference-mode probabilities for a list of images.
    pub fn predict_batch(&self, images: &[&Tensor]) -> Result<Vec<f64>> {
        for img in images {
            self.check_image(img)?;
        }
        if images.is_empty() {
            return Ok(Vec::new());
        }
        self.probabilities(&Tensor::stack(images)?)
    }

    pub fn predict(&self, image: &Tensor) -> Result<PredictionResult> {
        let p = self.predict_batch(&[image])?[0];
        Ok(PredictionResult::from_probability(p))
    }
}

/// Outcome of classifying one image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    /// Probability of "parasitized".
    pub probability: f64,
    pub predicted_class: Label,
    pub threshold: f64,
}

impl PredictionResult {
    pub fn from_probability(probability: f64) -> Self {
        PredictionResult {
            probability,
            predicted_class: Label::from_probability(probability),
            threshold: DECISION_THRESHOLD,
        }
    }

    /// Probability assigned to the predicted class.
    pub fn confidence(&self) -> f64 {
        match self.predicted_class {
            Label::Parasitized => self.probability,
            Label::Uninfected => 1.0 - self.probability,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn first_dense_in_dim(net: &Network) -> usize {
        net.layers()
            .iter()
            .find_map(|l| match l {
                Layer::Dense { weights, .. } => Some(weights.shape()[0]),
                _ => None,
            })
            .unwrap()
    }

    #[test]
    fn mlp_input_dims() {
        assert_eq!(first_dense_in_dim(&build_mlp([3, 128, 128], 0).unwrap()), 49152);
        assert_eq!(first_dense_in_dim(&build_mlp([3, 32, 32], 0).unwrap()), 3072);
        assert!(matches!(build_mlp([3, 127, 127], 0), Err(Error::Config(_))));
    }

    #[test]
    fn cnn_flatten_dims() {
        assert_eq!(first_dense_in_dim(&build_cnn([3, 32, 32], 0).unwrap()), 512);
        let big = build_cnn([3, 128, 128], 0).unwrap();
        assert_eq!(first_dense_in_dim(&big), 8192);
        let channels: Vec<usize> = big
            .layers()
            .iter()
            .filter_map(|l| match l {
                Layer::Conv2d { weights, .. } => Some(weights.shape()[0]),
                _ => None,
            })
            .collect();
        assert_eq!(channels, vec![32, 64, 128, 256, 512]);
    }

    #[test]
    fn summaries() {
        let mlp = build_mlp([3, 32, 32], 1).unwrap();
        assert_eq!(
            mlp.summary(),
            ["Flatten", "Dense(128, ReLU)", "Dense(128, ReLU)", "Dense(128, ReLU)", "Dropout(0.5)", "Dense(1, Sigmoid)"]
        );
        mlp.validate().unwrap();
        let cnn = build_cnn([3, 32, 32], 1).unwrap();
        assert_eq!(cnn.summary()[0], "Conv2D(32, 3x3, 1, ReLU)");
        assert_eq!(cnn.summary()[1], "AvgPool2D(2x2)");
        cnn.validate().unwrap();
    }

    #[test]
    fn zero_network_predicts_tie_as_parasitized() {
        let mut net = build_mlp([3, 32, 32], 3).unwrap();
        let zeros = net
            .layers()
            .iter()
            .filter_map(|l| l.params())
            .map(|(w, b)| (Tensor::zeros(w.shape()), Tensor::zeros(b.shape())))
            .collect();
        net.set_parameters(zeros).unwrap();
        let p = net.predict(&Tensor::filled(&[3, 32, 32], 0.6)).unwrap();
        assert_eq!(p.probability, 0.5);
        assert_eq!(p.predicted_class, Label::Parasitized);
    }

    #[test]
    fn zero_first_layer_passes_final_bias() {
        let mut net = build_mlp([3, 32, 32], 3).unwrap();
        let bias_final = -0.7;
        let n_param_layers = net.layers().iter().filter(|l| l.params().is_some()).count();
        let params = net
            .layers()
            .iter()
            .filter_map(|l| l.params())
            .enumerate()
            .map(|(i, (w, b))| {
                if i == 0 {
                    (Tensor::zeros(w.shape()), Tensor::zeros(b.shape()))
                } else if i == n_param_layers - 1 {
                    (w.clone(), Tensor::filled(b.shape(), bias_final))
                } else {
                    (w.clone(), b.clone())
                }
            })
            .collect();
        net.set_parameters(params).unwrap();
        // zero activations stay zero through ReLU/Dense with zero biases
        let p = net.predict(&Tensor::filled(&[3, 32, 32], 0.3)).unwrap();
        assert!((p.probability - crate::numerics::sigmoid(bias_final)).abs() < 1e-15);
        assert_eq!(p.predicted_class, Label::Uninfected);
    }

    #[test]
    fn predict_is_repeatable_and_checks_shape() {
        let net = build_cnn([3, 32, 32], 9).unwrap();
        let img = Tensor::filled(&[3, 32, 32], 0.4);
        let a = net.predict(&img).unwrap();
        let b = net.predict(&img).unwrap();
        assert_eq!(a.probability.to_bits(), b.probability.to_bits());
        assert!(matches!(net.predict(&Tensor::zeros(&[3, 16, 16])), Err(Error::Dimension(_))));
    }
}
