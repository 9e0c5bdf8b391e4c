//! Checkpoint container: versioned header, spec, class table, provenance, and
//! every parameter and optimizer tensor. JSON round-trips f64 values exactly,
//! so save/load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::ModelParams;
use super::ModelError;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Class vocabulary in index order.
    pub classes: Vec<String>,
    /// Window length the training data was produced with.
    pub window_seconds: f64,
    pub seed: u64,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(params: ModelParams, classes: Vec<String>, window_seconds: f64, seed: u64) -> Self {
        Checkpoint { version: CHECKPOINT_VERSION, classes, window_seconds, seed, params }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(ModelError::CheckpointVersion { found: self.version, expected: CHECKPOINT_VERSION });
        }
        self.params.shape_check().map_err(|e| ModelError::CheckpointInvalid(e.to_string()))?;
        if self.classes.len() != self.params.spec.class_count {
            return Err(ModelError::CheckpointInvalid(format!(
                "class table has {} entries, spec expects {}",
                self.classes.len(),
                self.params.spec.class_count
            )));
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<(), ModelError> {
    checkpoint.validate()?;
    let file = std::fs::File::create(path.as_ref())
        .map_err(|e| ModelError::Io(path.as_ref().display().to_string(), e))?;
    serde_json::to_writer(std::io::BufWriter::new(file), checkpoint)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, ModelError> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| ModelError::Io(path.as_ref().display().to_string(), e))?;
    let checkpoint: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
    checkpoint.validate()?;
    Ok(checkpoint)
}
