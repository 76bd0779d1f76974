//! The two classifier architectures, training with early stopping,
//! inference and weight persistence.

mod network;
mod persist;
mod train;

pub use network::{
    build_cnn, build_mlp, Architecture, Network, PredictionResult, CLASS_MAP, DECISION_THRESHOLD,
};
pub use persist::{load_weights, read_weights, save_weights, write_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};
pub use train::{
    evaluate_loss, train, train_with_observer, EarlyStopping, EpochStats, TrainingConfig,
    TrainingHistory,
};
