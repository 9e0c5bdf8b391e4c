//! Flow-based network intrusion detection toolkit.
//!
//! The pipeline turns timestamp-ordered flow records into time-window
//! host-aggregated feature vectors and trains small protocol-masked neural
//! networks with trainable activation functions on them:
//!
//! 1. [`ingest`] reads flow CSVs through a schema and harmonizes units,
//!    labels, and field names.
//! 2. [`window`] slides a per-host time window over the sorted stream and
//!    freezes per-flow counts and new-port flags.
//! 3. [`features`] derives the 20-value, endpoint-symmetric feature vector.
//! 4. [`activations`] provides the trainable step-ladder and peak-sum
//!    activations with localized learning.
//! 5. [`model`] assembles the networks, trains them with AdamW, and
//!    checkpoints them.
//! 6. [`eval`] computes the metric suite and runs the cross-dataset
//!    generalization and retraining protocols.
//! 7. [`synth`] generates labeled synthetic streams with controllable attack
//!    signatures for end-to-end runs without external data.

pub mod activations;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod model;
pub mod synth;
pub mod window;

pub use ingest::{FlowRecord, ProtocolClass};
pub use window::{WindowConfig, WindowedSample};
