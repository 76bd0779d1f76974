// Central finite-difference gradient checks against the tape's analytic
// gradients. Shared by the core integration tests and the acceptance run.

#![allow(dead_code)]

use limelens_core::numerics::{binary_cross_entropy, forward, Activation, DropoutMode, GradientTape, Layer, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor: components smaller than this are compared absolutely.
const FLOOR: f64 = 1e-6;

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn dense(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Layer {
    let scale = (3.0 / fan_in as f64).sqrt();
    Layer::dense(uniform(rng, &[fan_in, fan_out], scale), uniform(rng, &[fan_out], 0.2)).unwrap()
}

fn conv(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize, k: usize) -> Layer {
    let scale = (3.0 / (c_in * k * k) as f64).sqrt();
    Layer::conv2d(uniform(rng, &[c_out, c_in, k, k], scale), uniform(rng, &[c_out], 0.2)).unwrap()
}

fn targets(rng: &mut ChaCha8Rng, batch: usize) -> Vec<f64> {
    (0..batch).map(|_| f64::from(rng.gen_range(0..2u8))).collect()
}

/// Maximum relative error over every parameter and every input element.
pub fn max_relative_error(layers: &[Layer], input: &Tensor, targets: &[f64], mask_seed: u64) -> f64 {
    let mut tape = GradientTape::new();
    let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
    tape.forward(layers, input, DropoutMode::Sample(&mut mask_rng)).unwrap();
    let masks = tape.masks().unwrap().to_vec();
    let grads = tape.backward(layers, targets).unwrap();

    let loss = |layers: &[Layer], input: &Tensor| {
        let out = forward(layers, input, DropoutMode::Fixed(&masks)).unwrap();
        binary_cross_entropy(out.data(), targets).unwrap()
    };

    let mut worst: f64 = 0.0;
    for (li, layer) in layers.iter().enumerate() {
        let Some(pg) = &grads.layers[li] else {
            assert!(layer.params().is_none(), "layer {li} has parameters but no gradient");
            continue;
        };
        for which in 0..2 {
            let analytic = if which == 0 { pg.weights.data() } else { pg.bias.data() };
            for i in 0..analytic.len() {
                let eval = |delta: f64| {
                    let mut probe = layers.to_vec();
                    let (w, b) = probe[li].params_mut().unwrap();
                    let t = if which == 0 { w } else { b };
                    t.data_mut()[i] += delta;
                    loss(&probe, input)
                };
                let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
                worst = worst.max(rel_error(analytic[i], numeric));
            }
        }
    }
    for i in 0..input.len() {
        let eval = |delta: f64| {
            let mut probe = input.clone();
            probe.data_mut()[i] += delta;
            loss(layers, &probe)
        };
        let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
        worst = worst.max(rel_error(grads.input.data()[i], numeric));
    }
    worst
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Case {
    Dense,
    Conv2d,
    AvgPool2d,
    Dropout,
    Flatten,
    Relu,
    Sigmoid,
}

pub const CASES: [Case; 7] = [
    Case::Dense,
    Case::Conv2d,
    Case::AvgPool2d,
    Case::Dropout,
    Case::Flatten,
    Case::Relu,
    Case::Sigmoid,
];

/// A random small stack exercising `case` as its first layer, followed by a
/// dense sigmoid head so the BCE loss applies.
pub fn random_config(case: Case, seed: u64) -> (Vec<Layer>, Tensor, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = rng.gen_range(1..=3);
    let head = |rng: &mut ChaCha8Rng, mut layers: Vec<Layer>, width: usize| {
        layers.push(dense(rng, width, 1));
        layers.push(Layer::Activation(Activation::Sigmoid));
        layers
    };
    let (layers, input) = match case {
        Case::Dense | Case::Dropout | Case::Relu | Case::Sigmoid => {
            let (n_in, hidden) = (rng.gen_range(1..=6), rng.gen_range(1..=5));
            let mut layers = vec![dense(&mut rng, n_in, hidden)];
            match case {
                Case::Dropout => layers.push(Layer::dropout(rng.gen_range(0.0..0.8)).unwrap()),
                Case::Relu => layers.push(Layer::Activation(Activation::Relu)),
                Case::Sigmoid => layers.push(Layer::Activation(Activation::Sigmoid)),
                _ => {}
            }
            let input = uniform(&mut rng, &[batch, n_in], 1.0);
            (head(&mut rng, layers, hidden), input)
        }
        Case::Conv2d => {
            let (c_in, c_out) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let k = [1, 3, 5][rng.gen_range(0..3)];
            let (h, w) = (rng.gen_range(1..=5), rng.gen_range(1..=5));
            let layers = vec![conv(&mut rng, c_in, c_out, k), Layer::Flatten];
            let input = uniform(&mut rng, &[batch, c_in, h, w], 1.0);
            (head(&mut rng, layers, c_out * h * w), input)
        }
        Case::AvgPool2d => {
            let c = rng.gen_range(1..=3);
            let window = rng.gen_range(1..=3);
            let (h, w) = (window * rng.gen_range(1..=3), window * rng.gen_range(1..=3));
            let layers = vec![Layer::AvgPool2d { window }, Layer::Flatten];
            let input = uniform(&mut rng, &[batch, c, h, w], 1.0);
            (head(&mut rng, layers, c * (h / window) * (w / window)), input)
        }
        Case::Flatten => {
            let (c, h, w) = (rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=4));
            let input = uniform(&mut rng, &[batch, c, h, w], 1.0);
            (head(&mut rng, vec![Layer::Flatten], c * h * w), input)
        }
    };
    let t = targets(&mut rng, batch);
    (layers, input, t)
}

/// Scaled-down MLP with the production layer order.
pub fn tiny_mlp(seed: u64) -> (Vec<Layer>, Tensor, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = vec![Layer::Flatten];
    let mut width = 3 * 4 * 4;
    for _ in 0..3 {
        layers.push(dense(&mut rng, width, 8));
        layers.push(Layer::Activation(Activation::Relu));
        width = 8;
    }
    layers.push(Layer::dropout(0.5).unwrap());
    layers.push(dense(&mut rng, width, 1));
    layers.push(Layer::Activation(Activation::Sigmoid));
    let input = uniform(&mut rng, &[2, 3, 4, 4], 1.0);
    let t = targets(&mut rng, 2);
    (layers, input, t)
}

/// Scaled-down CNN with the production layer order.
pub fn tiny_cnn(seed: u64) -> (Vec<Layer>, Tensor, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut c = 3;
    for c_out in [4, 6] {
        layers.push(conv(&mut rng, c, c_out, 3));
        layers.push(Layer::Activation(Activation::Relu));
        layers.push(Layer::AvgPool2d { window: 2 });
        c = c_out;
    }
    layers.push(Layer::Flatten);
    layers.push(dense(&mut rng, c * 2 * 2, 8));
    layers.push(Layer::Activation(Activation::Relu));
    layers.push(dense(&mut rng, 8, 8));
    layers.push(Layer::Activation(Activation::Relu));
    layers.push(Layer::dropout(0.5).unwrap());
    layers.push(dense(&mut rng, 8, 1));
    layers.push(Layer::Activation(Activation::Sigmoid));
    let input = uniform(&mut rng, &[2, 3, 8, 8], 1.0);
    let t = targets(&mut rng, 2);
    (layers, input, t)
}
