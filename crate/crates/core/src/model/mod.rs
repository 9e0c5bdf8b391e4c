//! Model assembly: per-feature trainable activations feeding protocol-masked
//! fully connected sub-networks and a linear classifier.
//!
//! A [`ModelSpec`] names the input features, the activation attached to each,
//! the hidden layout, and the class count. [`ModelParams`] holds every
//! trainable tensor plus optimizer state. The forward pass evaluates the
//! activations once and routes the result through one sub-network per
//! protocol class; masking by the one-hot protocol flag makes the output
//! equal to evaluating only the matching branch.

mod checkpoint;
mod net;
mod optim;
mod spec;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use net::{
    loss_and_gradients, loss_and_gradients_unmasked, loss_and_gradients_weighted, ActivationGrads,
    ActivationParams, Branch, BranchGrads, Linear, LinearGrads, ModelGrads, ModelParams,
    OptimizerState,
};
pub use optim::{adamw_update, AdamWConfig};
pub use spec::{parse_spec_name, ActivationKind, InputSpec, ModelSpec};
pub use train::{
    accuracy, classes_from_rows, train, write_metrics_csv, Dataset, EpochMetrics, TrainConfig,
    TrainOutcome, TrainSample,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("label `{0}` is not in the class vocabulary")]
    UnknownLabel(String),
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("invalid checkpoint: {0}")]
    CheckpointInvalid(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("checkpoint encoding: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Activation(#[from] crate::activations::ActivationError),
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
    #[error("metrics csv: {0}")]
    Csv(#[from] csv::Error),
}
