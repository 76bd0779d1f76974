//! Command line front end and local HTTP service for `limelens_core`.

pub mod cli;
pub mod service;

pub use cli::run;

/// Extension used for weight files written by `train` and picked up by
/// `serve`.
pub const WEIGHTS_EXTENSION: &str = "lmnw";
/// Suffix of the explanation document written next to the overlay.
pub const EXPLANATION_SUFFIX: &str = ".explanation.json";
