//! Numeric substrate: tensors, the six layer kinds, binary cross entropy,
//! reverse-mode gradients and SGD with momentum.
//!
//! All arithmetic is `f64`. Matrix products run over a fixed output tiling,
//! so results are bit-identical regardless of the rayon worker count.

mod gemm;
mod layers;
mod loss;
mod sgd;
mod tape;
mod tensor;

pub use layers::{
    activation_apply, avgpool2d_forward, conv2d_forward, dense_forward, sigmoid, Activation,
    Layer, LayerKind,
};
pub use loss::{binary_cross_entropy, BCE_EPSILON};
pub use sgd::Sgd;
pub use tape::{forward, DropoutMasks, DropoutMode, GradientTape, Gradients, ParamGrad};
pub use tensor::Tensor;
