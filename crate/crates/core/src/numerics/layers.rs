use serde::{Deserialize, Serialize};

use super::gemm::{gemm, MatRef};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Elementwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "ReLU",
            Activation::Sigmoid => "Sigmoid",
        }
    }
}

/// Discriminant of [`Layer`], used for structural descriptions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Dense,
    Conv2D,
    AvgPool2D,
    Dropout,
    Flatten,
    Activation,
}

/// One layer of a feed-forward stack together with its parameters.
///
/// Dense weights are `[in_dim, out_dim]`; Conv2D weights are
/// `[out_channels, in_channels, k, k]` with an odd `k`, stride 1 and SAME
/// zero padding.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense { weights: Tensor, bias: Tensor },
    Conv2d { weights: Tensor, bias: Tensor },
    AvgPool2d { window: usize },
    Dropout { rate: f64 },
    Flatten,
    Activation(Activation),
}

impl Layer {
    pub fn dense(weights: Tensor, bias: Tensor) -> Result<Self> {
        let ws = weights.shape();
        if ws.len() != 2 || bias.shape() != [ws[1]] {
            return Err(Error::Dimension(format!(
                "dense weights {ws:?} need shape [in, out] and bias [out], got bias {:?}",
                bias.shape()
            )));
        }
        Ok(Layer::Dense { weights, bias })
    }

    pub fn conv2d(weights: Tensor, bias: Tensor) -> Result<Self> {
        let ws = weights.shape();
        if ws.len() != 4 || ws[2] != ws[3] || ws[2] % 2 == 0 || bias.shape() != [ws[0]] {
            return Err(Error::Dimension(format!(
                "conv weights {ws:?} need shape [out, in, k, k] with odd k and bias [out], got bias {:?}",
                bias.shape()
            )));
        }
        Ok(Layer::Conv2d { weights, bias })
    }

    pub fn dropout(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Layer::Dropout { rate })
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense { .. } => LayerKind::Dense,
            Layer::Conv2d { .. } => LayerKind::Conv2D,
            Layer::AvgPool2d { .. } => LayerKind::AvgPool2D,
            Layer::Dropout { .. } => LayerKind::Dropout,
            Layer::Flatten => LayerKind::Flatten,
            Layer::Activation(_) => LayerKind::Activation,
        }
    }

    pub fn params(&self) -> Option<(&Tensor, &Tensor)> {
        match self {
            Layer::Dense { weights, bias } | Layer::Conv2d { weights, bias } => Some((weights, bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Tensor, &mut Tensor)> {
        match self {
            Layer::Dense { weights, bias } | Layer::Conv2d { weights, bias } => Some((weights, bias)),
            _ => None,
        }
    }

    /// Output shape for a given input shape (batch axis included).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense { weights, .. } => {
                let ws = weights.shape();
                if input.len() != 2 || input[1] != ws[0] {
                    return Err(dense_mismatch(input, ws));
                }
                Ok(vec![input[0], ws[1]])
            }
            Layer::Conv2d { weights, .. } => {
                let ws = weights.shape();
                if input.len() != 4 || input[1] != ws[1] {
                    return Err(conv_mismatch(input, ws));
                }
                Ok(vec![input[0], ws[0], input[2], input[3]])
            }
            Layer::AvgPool2d { window } => {
                check_poolable(input, *window)?;
                Ok(vec![input[0], input[1], input[2] / window, input[3] / window])
            }
            Layer::Flatten => {
                if input.is_empty() {
                    return Err(Error::Dimension("cannot flatten a scalar".into()));
                }
                Ok(vec![input[0], input[1..].iter().product()])
            }
            Layer::Dropout { .. } | Layer::Activation(_) => Ok(input.to_vec()),
        }
    }
}

fn dense_mismatch(input: &[usize], weights: &[usize]) -> Error {
    Error::Dimension(format!(
        "dense input {input:?} does not match weights {weights:?}"
    ))
}

fn conv_mismatch(input: &[usize], weights: &[usize]) -> Error {
    Error::Dimension(format!(
        "conv input {input:?} does not match weights {weights:?} (need [batch, in_channels, h, w])"
    ))
}

fn check_poolable(input: &[usize], window: usize) -> Result<()> {
    if input.len() != 4 {
        return Err(Error::Dimension(format!(
            "pooling needs [batch, c, h, w], got {input:?}"
        )));
    }
    if window == 0 || input[2] % window != 0 || input[3] % window != 0 {
        return Err(Error::Dimension(format!(
            "spatial dims {}x{} not divisible by pool window {window}",
            input[2], input[3]
        )));
    }
    Ok(())
}

/// `out[b, j] = sum_i in[b, i] * W[i, j] + bias[j]`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (is, ws) = (input.shape(), weights.shape());
    if is.len() != 2 || ws.len() != 2 || is[1] != ws[0] || bias.len() != ws[1] {
        return Err(dense_mismatch(is, ws));
    }
    let (batch, in_dim, out_dim) = (is[0], ws[0], ws[1]);
    let mut out = Vec::with_capacity(batch * out_dim);
    for _ in 0..batch {
        out.extend_from_slice(bias.data());
    }
    gemm(
        batch,
        in_dim,
        out_dim,
        MatRef::rows(input.data(), in_dim),
        MatRef::rows(weights.data(), out_dim),
        1.0,
        &mut out,
    );
    Ok(Tensor::from_parts(vec![batch, out_dim], out))
}

/// Returns `(d_input, d_weights, d_bias)`.
pub(crate) fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    d_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (batch, in_dim) = (input.shape()[0], input.shape()[1]);
    let out_dim = weights.shape()[1];
    let mut d_w = vec![0.0; in_dim * out_dim];
    gemm(
        in_dim,
        batch,
        out_dim,
        MatRef::transposed(input.data(), in_dim),
        MatRef::rows(d_out.data(), out_dim),
        0.0,
        &mut d_w,
    );
    let mut d_b = vec![0.0; out_dim];
    for row in d_out.data().chunks_exact(out_dim) {
        for (acc, v) in d_b.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let mut d_in = vec![0.0; batch * in_dim];
    gemm(
        batch,
        out_dim,
        in_dim,
        MatRef::rows(d_out.data(), out_dim),
        MatRef::transposed(weights.data(), out_dim),
        0.0,
        &mut d_in,
    );
    (
        Tensor::from_parts(input.shape().to_vec(), d_in),
        Tensor::from_parts(weights.shape().to_vec(), d_w),
        Tensor::from_parts(vec![out_dim], d_b),
    )
}

/// Unfolds `[batch, c, h, w]` into a `[c*k*k, batch*h*w]` patch matrix
/// with SAME zero padding.
fn im2col(input: &Tensor, k: usize) -> Vec<f64> {
    let s = input.shape();
    let (batch, c, h, w) = (s[0], s[1], s[2], s[3]);
    let pad = (k / 2) as isize;
    let hw = h * w;
    let n = batch * hw;
    let mut cols = vec![0.0; c * k * k * n];
    let x = input.data();
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for b in 0..batch {
                    let plane = &x[(b * c + ci) * hw..(b * c + ci + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                        let dst_row = &mut dst[b * hw + y * w..b * hw + (y + 1) * w];
                        for xx in 0..w {
                            let sx = xx as isize + kx as isize - pad;
                            if sx >= 0 && sx < w as isize {
                                dst_row[xx] = src_row[sx as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Folds a patch-matrix gradient back onto `[batch, c, h, w]`.
fn col2im(cols: &[f64], shape: &[usize], k: usize) -> Vec<f64> {
    let (batch, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let pad = (k / 2) as isize;
    let hw = h * w;
    let n = batch * hw;
    let mut out = vec![0.0; batch * c * hw];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for b in 0..batch {
                    let plane = &mut out[(b * c + ci) * hw..(b * c + ci + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src_row = &src[b * hw + y * w..b * hw + (y + 1) * w];
                        let dst_row = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                        for xx in 0..w {
                            let sx = xx as isize + kx as isize - pad;
                            if sx >= 0 && sx < w as isize {
                                dst_row[sx as usize] += src_row[xx];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Stride-1 cross-correlation with SAME zero padding plus per-channel bias.
pub fn conv2d_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (is, ws) = (input.shape(), weights.shape());
    if is.len() != 4 || ws.len() != 4 || is[1] != ws[1] || bias.len() != ws[0] {
        return Err(conv_mismatch(is, ws));
    }
    let (batch, h, w) = (is[0], is[2], is[3]);
    let (c_out, k) = (ws[0], ws[2]);
    let kdim = ws[1] * k * k;
    let hw = h * w;
    let n = batch * hw;
    let cols = im2col(input, k);
    let mut mat = vec![0.0; c_out * n];
    gemm(
        c_out,
        kdim,
        n,
        MatRef::rows(weights.data(), kdim),
        MatRef::rows(&cols, n),
        0.0,
        &mut mat,
    );
    let mut out = vec![0.0; batch * c_out * hw];
    for co in 0..c_out {
        let bv = bias.data()[co];
        for b in 0..batch {
            let src = &mat[co * n + b * hw..co * n + (b + 1) * hw];
            let dst = &mut out[(b * c_out + co) * hw..(b * c_out + co + 1) * hw];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s + bv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![batch, c_out, h, w], out))
}

pub(crate) fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    d_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let is = input.shape();
    let ws = weights.shape();
    let (batch, h, w) = (is[0], is[2], is[3]);
    let (c_out, k) = (ws[0], ws[2]);
    let kdim = ws[1] * k * k;
    let hw = h * w;
    let n = batch * hw;

    let mut d_mat = vec![0.0; c_out * n];
    let mut d_b = vec![0.0; c_out];
    for co in 0..c_out {
        let mut acc = 0.0;
        for b in 0..batch {
            let src = &d_out.data()[(b * c_out + co) * hw..(b * c_out + co + 1) * hw];
            d_mat[co * n + b * hw..co * n + (b + 1) * hw].copy_from_slice(src);
            acc += src.iter().sum::<f64>();
        }
        d_b[co] = acc;
    }

    let cols = im2col(input, k);
    let mut d_w = vec![0.0; c_out * kdim];
    gemm(
        c_out,
        n,
        kdim,
        MatRef::rows(&d_mat, n),
        MatRef::transposed(&cols, n),
        0.0,
        &mut d_w,
    );
    drop(cols);

    let mut d_cols = vec![0.0; kdim * n];
    gemm(
        kdim,
        c_out,
        n,
        MatRef::transposed(weights.data(), kdim),
        MatRef::rows(&d_mat, n),
        0.0,
        &mut d_cols,
    );
    let d_in = col2im(&d_cols, is, k);
    (
        Tensor::from_parts(is.to_vec(), d_in),
        Tensor::from_parts(ws.to_vec(), d_w),
        Tensor::from_parts(vec![c_out], d_b),
    )
}

/// Non-overlapping `window x window` average pooling (stride = window).
pub fn avgpool2d_forward(input: &Tensor, window: usize) -> Result<Tensor> {
    let s = input.shape();
    check_poolable(s, window)?;
    let (batch, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h / window, w / window);
    let scale = 1.0 / (window * window) as f64;
    let x = input.data();
    let mut out = vec![0.0; batch * c * oh * ow];
    for plane in 0..batch * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for dy in 0..window {
                    let row = (oy * window + dy) * w + ox * window;
                    acc += src[row..row + window].iter().sum::<f64>();
                }
                dst[oy * ow + ox] = acc * scale;
            }
        }
    }
    Ok(Tensor::from_parts(vec![batch, c, oh, ow], out))
}

pub(crate) fn avgpool2d_backward(input_shape: &[usize], window: usize, d_out: &Tensor) -> Tensor {
    let (batch, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (oh, ow) = (h / window, w / window);
    let scale = 1.0 / (window * window) as f64;
    let mut d_in = vec![0.0; batch * c * h * w];
    for plane in 0..batch * c {
        let g = &d_out.data()[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut d_in[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = g[(y / window) * ow + x / window] * scale;
            }
        }
    }
    Tensor::from_parts(input_shape.to_vec(), d_in)
}

pub fn activation_apply(input: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Relu => input.map(|v| v.max(0.0)),
        Activation::Sigmoid => input.map(sigmoid),
    }
}

pub(crate) fn activation_backward(
    input: &Tensor,
    output: &Tensor,
    kind: Activation,
    d_out: &Tensor,
) -> Tensor {
    let data = match kind {
        Activation::Relu => input
            .data()
            .iter()
            .zip(d_out.data())
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect(),
        Activation::Sigmoid => output
            .data()
            .iter()
            .zip(d_out.data())
            .map(|(&p, &g)| g * p * (1.0 - p))
            .collect(),
    };
    Tensor::from_parts(input.shape().to_vec(), data)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
