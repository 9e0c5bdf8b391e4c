//! Model specifications: named presets and the custom-spec format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::features::FeatureId;

use super::ModelError;

/// Activation assigned to one model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActivationKind {
    /// Pass the raw value through.
    None,
    /// `erf(k * x)` with trainable slope `k`.
    ScaledErf,
    /// `erf(x - x0)` with trainable position `x0`.
    ShiftedErf,
    /// Step ladder with `n` trainable (slope, position) steps.
    Step { n: usize },
    /// Peak sum with `n` trainable (width, position) peaks.
    Peak { n: usize },
}

/// One model input: which feature it reads and how it is activated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub feature: FeatureId,
    pub activation: ActivationKind,
}

/// Architecture description: inputs, hidden layout, classifier width, and
/// whether the sub-networks are protocol-masked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub inputs: Vec<InputSpec>,
    /// Hidden layer widths: empty (activations feed the classifier directly)
    /// or exactly two entries.
    pub hidden: Vec<usize>,
    pub class_count: usize,
    pub protocol_masked: bool,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.inputs.is_empty() {
            return Err(ModelError::InvalidSpec("no inputs".into()));
        }
        if !(self.hidden.is_empty() || self.hidden.len() == 2) {
            return Err(ModelError::InvalidSpec(format!(
                "hidden layout must be empty or two layers, got {:?}",
                self.hidden
            )));
        }
        if self.hidden.contains(&0) {
            return Err(ModelError::InvalidSpec("hidden layer width must be positive".into()));
        }
        if self.class_count < 2 {
            return Err(ModelError::InvalidSpec(format!("class count must be >= 2, got {}", self.class_count)));
        }
        for input in &self.inputs {
            match input.activation {
                ActivationKind::Step { n } | ActivationKind::Peak { n } if n == 0 => {
                    return Err(ModelError::InvalidSpec("activation unit count must be >= 1".into()));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn input_ids(&self) -> Vec<FeatureId> {
        self.inputs.iter().map(|i| i.feature).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.len()
    }

    /// Branch count: three protocol sub-networks when masked, one otherwise.
    pub fn branch_count(&self) -> usize {
        if self.protocol_masked {
            3
        } else {
            1
        }
    }

    /// Load a custom spec from JSON.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| ModelError::Io(path.as_ref().display().to_string(), e))?;
        let spec: ModelSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }
}

fn f(n: u8) -> FeatureId {
    FeatureId::feature(n).expect("preset feature number")
}

fn inputs(groups: &[(&[u8], ActivationKind)]) -> Vec<InputSpec> {
    let mut out = Vec::new();
    for (numbers, activation) in groups {
        for &n in *numbers {
            out.push(InputSpec { feature: f(n), activation: *activation });
        }
    }
    out
}

/// Build one of the named presets. `hidden` of `None` selects the preset's
/// default layout; `Some(vec![])` removes the hidden layers.
pub fn preset(name: &str, hidden: Option<Vec<usize>>, class_count: usize) -> Result<ModelSpec, ModelError> {
    let lower = name.to_ascii_lowercase();
    let (mut spec_inputs, default_hidden) = match lower.as_str() {
        "twnet1" => {
            let mut v = inputs(&[(&[1, 3, 5, 13, 15], ActivationKind::ScaledErf), (&[2], ActivationKind::None)]);
            v.push(InputSpec { feature: FeatureId::ZeroLengthFlag, activation: ActivationKind::None });
            (v, vec![16, 32])
        }
        "twnet2" => {
            let v = inputs(&[
                (&[1, 3, 5, 13, 15], ActivationKind::ScaledErf),
                (&[6, 7, 8, 9], ActivationKind::ShiftedErf),
                (&[6, 7, 8, 9], ActivationKind::ShiftedErf),
                (&[12], ActivationKind::None),
                (&[1], ActivationKind::None),
            ]);
            (v, vec![16, 32])
        }
        "twnet3" => (
            inputs(&[
                (&[1], ActivationKind::Step { n: 3 }),
                (&[3, 5, 13, 14, 15, 16, 17, 18, 19, 20], ActivationKind::Step { n: 1 }),
                (&[6, 7, 8, 9, 10, 11], ActivationKind::Step { n: 2 }),
                (&[12], ActivationKind::None),
            ]),
            vec![32, 32],
        ),
        "twnet4" => (
            inputs(&[
                (&[1], ActivationKind::Step { n: 3 }),
                (&[3, 5, 13, 14, 15, 16, 17, 18, 19, 20], ActivationKind::Step { n: 1 }),
                (&[6, 7, 8, 9, 10, 11], ActivationKind::Peak { n: 2 }),
                (&[12], ActivationKind::None),
            ]),
            vec![32, 16],
        ),
        "twnet5" => (
            inputs(&[
                (&[1], ActivationKind::Step { n: 3 }),
                (&[2, 3, 4, 5, 13, 14, 15, 16, 17, 18, 19, 20], ActivationKind::Step { n: 1 }),
                (&[6, 7, 8, 9, 10, 11], ActivationKind::Peak { n: 3 }),
                (&[12], ActivationKind::None),
            ]),
            vec![32, 16],
        ),
        other => return Err(ModelError::InvalidSpec(format!("unknown preset `{other}`"))),
    };
    spec_inputs.shrink_to_fit();
    let spec = ModelSpec {
        name: name.to_string(),
        inputs: spec_inputs,
        hidden: hidden.unwrap_or(default_hidden),
        class_count,
        protocol_masked: true,
    };
    spec.validate()?;
    Ok(spec)
}

/// Parse `twnet5`, `twnet5{32,16}`, or `twnet3{0}` into a spec.
pub fn parse_spec_name(name: &str, class_count: usize) -> Result<ModelSpec, ModelError> {
    let trimmed = name.trim();
    let (base, hidden) = match trimmed.find('{') {
        None => (trimmed, None),
        Some(open) => {
            let close = trimmed
                .rfind('}')
                .ok_or_else(|| ModelError::InvalidSpec(format!("unbalanced braces in `{trimmed}`")))?;
            let inner = &trimmed[open + 1..close];
            let sizes: Result<Vec<usize>, _> = inner.split(',').map(|s| s.trim().parse::<usize>()).collect();
            let sizes = sizes.map_err(|_| ModelError::InvalidSpec(format!("bad hidden layout `{inner}`")))?;
            let hidden = if sizes == [0] { vec![] } else { sizes };
            (&trimmed[..open], Some(hidden))
        }
    };
    preset(base, hidden, class_count)
}
