//! Core engine for training two cell-image classifiers (a multi-layer
//! perceptron and a small VGG-style CNN), explaining single predictions with
//! a LIME-style local surrogate, and comparing the explanation strategies of
//! two models.
//!
//! Module map:
//!
//! - [`numerics`]: tensors, layer forward/backward passes, loss, SGD.
//! - [`models`]: the two architectures, training with early stopping,
//!   prediction and the `LMNW` weights file.
//! - [`data`]: PNG class-directory ingestion, resizing, stratified splits
//!   and a synthetic cell-image generator.
//! - [`metrics`]: confusion matrix and classification report.
//! - [`lime`]: grid segmentation, perturbation sampling, weighted ridge
//!   surrogate, top-k region selection and overlay rendering.
//! - [`compare`]: region overlap and border-artifact detection across two
//!   models.

pub mod compare;
pub mod data;
pub mod error;
pub mod lime;
pub mod metrics;
pub mod models;
pub mod numerics;

pub use error::{Error, Result};

/// Version stamped into every serialized document.
pub const DOCUMENT_VERSION: u32 = 1;
