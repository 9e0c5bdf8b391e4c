//! Training loop: 80/20 split, shuffled mini-batches, AdamW, per-epoch metrics.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::features::FeatureVector;

use super::net::{loss_and_gradients_weighted, ModelParams};
use super::optim::AdamWConfig;
use super::spec::ModelSpec;
use super::ModelError;

/// One prepared training row: selected raw inputs, branch index, class index.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub inputs: Vec<f64>,
    pub branch: usize,
    pub label: usize,
}

/// Prepared samples plus the class vocabulary they are indexed against.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<TrainSample>,
    pub classes: Vec<String>,
}

/// Sorted distinct labels of a labeled feature set.
pub fn classes_from_rows(rows: &[(FeatureVector, String)]) -> Vec<String> {
    let mut classes: Vec<String> = rows.iter().map(|(_, l)| l.clone()).collect();
    classes.sort();
    classes.dedup();
    classes
}

impl Dataset {
    /// Prepare labeled feature vectors for a spec against a class vocabulary.
    pub fn prepare(
        rows: &[(FeatureVector, String)],
        spec: &ModelSpec,
        classes: Vec<String>,
    ) -> Result<Self, ModelError> {
        spec.validate()?;
        if classes.len() != spec.class_count {
            return Err(ModelError::InvalidSpec(format!(
                "spec expects {} classes, vocabulary has {}",
                spec.class_count,
                classes.len()
            )));
        }
        let ids = spec.input_ids();
        let mut samples = Vec::with_capacity(rows.len());
        for (v, label) in rows {
            let label_idx = classes
                .iter()
                .position(|c| c == label)
                .ok_or_else(|| ModelError::UnknownLabel(label.clone()))?;
            let branch = if spec.protocol_masked { v.protocol.index() } else { 0 };
            samples.push(TrainSample {
                inputs: crate::features::select_features(v, &ids),
                branch,
                label: label_idx,
            });
        }
        Ok(Dataset { samples, classes })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Column `j` of the prepared inputs, for activation initialization.
    pub fn input_column(&self, j: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.inputs[j]).collect()
    }

    /// All input columns, in spec input order.
    pub fn input_columns(&self, spec: &ModelSpec) -> Vec<Vec<f64>> {
        (0..spec.input_dim()).map(|j| self.input_column(j)).collect()
    }
}

/// Training hyperparameters. Batch size defaults to 512; the evaluation
/// fraction implements the 80/20 split. Class weights rebalance the loss when
/// provided; plain cross-entropy is the default.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    pub eval_fraction: f64,
    pub class_weights: Option<Vec<f64>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            batch_size: 512,
            optimizer: AdamWConfig::default(),
            seed: 0,
            eval_fraction: 0.2,
            class_weights: None,
        }
    }
}

/// Metrics recorded after each epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    /// Accuracy on the held-out split; absent when the split is empty.
    pub eval_acc: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub warnings: Vec<String>,
}

/// Fraction of correctly predicted samples.
pub fn accuracy(params: &ModelParams, samples: &[TrainSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let correct = samples.iter().filter(|s| params.predict(s) == s.label).count();
    correct as f64 / samples.len() as f64
}

/// Train in place. Deterministic given the seed: the split, the per-epoch
/// shuffles, and every update are driven by one seeded generator.
pub fn train(
    params: &mut ModelParams,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if data.classes.len() != params.spec.class_count {
        return Err(ModelError::InvalidSpec(format!(
            "dataset vocabulary has {} classes, model expects {}",
            data.classes.len(),
            params.spec.class_count
        )));
    }
    if cfg.batch_size == 0 {
        return Err(ModelError::InvalidSpec("batch size must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.eval_fraction) {
        return Err(ModelError::InvalidSpec(format!("eval fraction {} out of [0,1)", cfg.eval_fraction)));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let eval_len = (data.len() as f64 * cfg.eval_fraction).round() as usize;
    let (train_idx, eval_idx) = order.split_at(data.len() - eval_len);
    let mut train_idx = train_idx.to_vec();
    let eval_idx = eval_idx.to_vec();

    let mut warnings = Vec::new();
    for (c, name) in data.classes.iter().enumerate() {
        if !train_idx.iter().any(|&i| data.samples[i].label == c) {
            warnings.push(format!("class `{name}` has no samples in the training split"));
        }
    }

    let train_view = |idx: &[usize]| -> Vec<TrainSample> {
        idx.iter().map(|&i| data.samples[i].clone()).collect()
    };
    let eval_samples = train_view(&eval_idx);

    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut batch_buf: Vec<TrainSample> = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in train_idx.chunks(cfg.batch_size) {
            batch_buf.clear();
            batch_buf.extend(chunk.iter().map(|&i| data.samples[i].clone()));
            let (loss, grads) =
                loss_and_gradients_weighted(params, &batch_buf, cfg.class_weights.as_deref())?;
            params.adamw_step(&grads, &cfg.optimizer)?;
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_samples = train_view(&train_idx);
        let train_acc = accuracy(params, &train_samples);
        let eval_acc = (!eval_samples.is_empty()).then(|| accuracy(params, &eval_samples));
        metrics.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            train_acc,
            eval_acc,
            wall_time_s: started.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainOutcome { metrics, warnings })
}

/// One CSV row per epoch: epoch, train_loss, train_acc, eval_acc, wall_time.
pub fn write_metrics_csv(path: impl AsRef<Path>, metrics: &[EpochMetrics]) -> Result<(), ModelError> {
    let mut w = csv::WriterBuilder::new().from_path(path.as_ref())?;
    w.write_record(["epoch", "train_loss", "train_acc", "eval_acc", "wall_time"])?;
    for m in metrics {
        w.write_record(&[
            m.epoch.to_string(),
            m.train_loss.to_string(),
            m.train_acc.to_string(),
            m.eval_acc.map(|a| a.to_string()).unwrap_or_default(),
            m.wall_time_s.to_string(),
        ])?;
    }
    w.flush().map_err(|e| ModelError::Io(path.as_ref().display().to_string(), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ProtocolClass;
    use crate::model::spec::{parse_spec_name, preset};

    fn two_blob_rows(n_per_class: usize) -> Vec<(FeatureVector, String)> {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha20Rng::seed_from_u64(500);
        let mut rows = Vec::new();
        for i in 0..2 * n_per_class {
            let label = if i % 2 == 0 { "Benign" } else { "DoS" };
            let center = if i % 2 == 0 { 1.0 } else { 100.0 };
            let mut values = [0.0; 20];
            for v in values.iter_mut() {
                *v = center * rng.random_range(0.8..1.2);
            }
            let proto = ProtocolClass::ALL[i % 3];
            rows.push((FeatureVector { values, protocol: proto }, label.to_string()));
        }
        rows
    }

    #[test]
    fn zero_epochs_change_nothing() {
        let rows = two_blob_rows(32);
        let classes = classes_from_rows(&rows);
        let spec = parse_spec_name("twnet3{0}", classes.len()).unwrap();
        let data = Dataset::prepare(&rows, &spec, classes).unwrap();
        let mut params = ModelParams::build(&spec, 3, Some(&data.input_columns(&spec))).unwrap();
        let before = params.clone();
        let out = train(&mut params, &data, &TrainConfig { epochs: 0, ..TrainConfig::default() }).unwrap();
        assert!(out.metrics.is_empty());
        assert_eq!(params, before);
    }

    #[test]
    fn same_seed_same_final_parameters() {
        let rows = two_blob_rows(64);
        let classes = classes_from_rows(&rows);
        let spec = parse_spec_name("twnet3{0}", classes.len()).unwrap();
        let data = Dataset::prepare(&rows, &spec, classes).unwrap();
        let cfg = TrainConfig { epochs: 3, batch_size: 16, seed: 77, ..TrainConfig::default() };
        let run = || {
            let mut p = ModelParams::build(&spec, 9, Some(&data.input_columns(&spec))).unwrap();
            train(&mut p, &data, &cfg).unwrap();
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn separable_classes_reach_high_training_accuracy() {
        let rows = two_blob_rows(3000);
        let classes = classes_from_rows(&rows);
        let spec = parse_spec_name("twnet3{0}", classes.len()).unwrap();
        let data = Dataset::prepare(&rows, &spec, classes).unwrap();
        let mut params = ModelParams::build(&spec, 1, Some(&data.input_columns(&spec))).unwrap();
        let cfg = TrainConfig { epochs: 8, batch_size: 16, seed: 1, ..TrainConfig::default() };
        let out = train(&mut params, &data, &cfg).unwrap();
        let last = out.metrics.last().unwrap();
        assert!(last.train_acc >= 0.99, "train accuracy {}", last.train_acc);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let spec = preset("twnet3", Some(vec![]), 2).unwrap();
        let data = Dataset { samples: vec![], classes: vec!["a".into(), "b".into()] };
        let mut params = ModelParams::build(&spec, 0, None).unwrap();
        assert!(matches!(
            train(&mut params, &data, &TrainConfig::default()),
            Err(ModelError::EmptyDataset)
        ));
    }

    #[test]
    fn missing_class_in_split_warns() {
        // one DoS sample: it will land in either split; if it lands in eval,
        // the training split has no DoS
        let mut rows = two_blob_rows(4);
        rows.truncate(5);
        let classes = classes_from_rows(&rows);
        let spec = parse_spec_name("twnet3{0}", classes.len()).unwrap();
        let data = Dataset::prepare(&rows, &spec, classes).unwrap();
        let mut any_warning = false;
        for seed in 0..20 {
            let mut params = ModelParams::build(&spec, 0, None).unwrap();
            let cfg = TrainConfig { epochs: 1, batch_size: 4, seed, eval_fraction: 0.4, ..TrainConfig::default() };
            let out = train(&mut params, &data, &cfg).unwrap();
            any_warning |= !out.warnings.is_empty();
        }
        assert!(any_warning);
    }

    #[test]
    fn unknown_label_rejected_at_preparation() {
        let rows = two_blob_rows(4);
        let spec = parse_spec_name("twnet3{0}", 2).unwrap();
        let err = Dataset::prepare(&rows, &spec, vec!["Benign".into(), "PortScan".into()]).unwrap_err();
        assert!(matches!(err, ModelError::UnknownLabel(_)));
    }
}
