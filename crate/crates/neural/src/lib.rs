//! Convolutional classifiers over per-day tweet embedding stacks, trained on the CPU in f64.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod train;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use loss::{bce_loss, focal_loss, FocalLossParams, LossKind};
pub use model::{predict_proba_nn, Layer, Mode, Model, ModelSpec, ParallelCnnSpec, SequentialCnnSpec, Trace};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use train::{predict_batch, train, Dataset, EpochRecord, InMemoryDataset, TrainConfig, TrainHistory};

#[derive(Debug, thiserror::Error)]
pub enum NeuralError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
