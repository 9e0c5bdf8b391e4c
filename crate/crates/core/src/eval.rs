//! Metric suite and experiment protocols.
//!
//! Provides the confusion matrix with per-class recall/precision/F1, the
//! correct-attack-detections rate (CAD: summed attack true positives over
//! summed attack predictions), and two runners: cross-dataset generalization
//! (train on one set, score another untouched) and retrain/forgetting
//! (train, switch datasets, measure what the first set lost).

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::model::{
    accuracy, train, Dataset, ModelError, ModelParams, TrainConfig, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction/truth length mismatch: {pred} vs {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("class index {0} out of range for {1} classes")]
    UnknownClass(usize, usize),
    #[error("datasets share no attack classes")]
    NoSharedAttacks,
    #[error("datasets use different class vocabularies")]
    VocabularyMismatch,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("report csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

// ── Confusion matrix ──────────────────────────────────────────────────────────

/// C×C count matrix; rows are true classes, columns are predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
    classes: Vec<String>,
}

/// Per-class rates derived from one matrix row/column.
#[derive(Debug, Clone, Serialize)]
pub struct ClassMetrics {
    pub class: String,
    pub support: u64,
    pub predicted: u64,
    pub true_positive: u64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    /// Set when recall, precision, or F1 came from a 0/0 case.
    pub degenerate: bool,
}

/// CAD value plus a flag for the no-predicted-attacks degenerate case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cad {
    pub value: f64,
    pub degenerate: bool,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>, classes: Vec<String>) -> Result<Self, EvalError> {
        let c = classes.len();
        if counts.len() != c || counts.iter().any(|row| row.len() != c) {
            return Err(EvalError::UnknownClass(counts.len(), c));
        }
        Ok(Self { counts, classes })
    }

    /// Build from parallel prediction/truth class-index sequences.
    pub fn from_predictions(
        truth: &[usize],
        pred: &[usize],
        classes: &[String],
    ) -> Result<Self, EvalError> {
        if truth.len() != pred.len() {
            return Err(EvalError::LengthMismatch { pred: pred.len(), truth: truth.len() });
        }
        let c = classes.len();
        let mut counts = vec![vec![0u64; c]; c];
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= c {
                return Err(EvalError::UnknownClass(t, c));
            }
            if p >= c {
                return Err(EvalError::UnknownClass(p, c));
            }
            counts[t][p] += 1;
        }
        Ok(Self { counts, classes: classes.to_vec() })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn column_sum(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }

    pub fn class_metrics(&self) -> Vec<ClassMetrics> {
        (0..self.classes.len())
            .map(|c| {
                let tp = self.counts[c][c];
                let support = self.row_sum(c);
                let predicted = self.column_sum(c);
                let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
                let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                ClassMetrics {
                    class: self.classes[c].clone(),
                    support,
                    predicted,
                    true_positive: tp,
                    recall,
                    precision,
                    f1,
                    degenerate: support == 0 || predicted == 0,
                }
            })
            .collect()
    }

    /// Human-readable rendering: count grid plus the totals and rate rows.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let width = 12usize;
        let name_width = self.classes.iter().map(|c| c.len()).max().unwrap_or(4).max("True Positive".len());
        let _ = write!(out, "{:name_width$}", "");
        for c in &self.classes {
            let _ = write!(out, " {c:>width$}");
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            let _ = write!(out, "{:name_width$}", self.classes[i]);
            for v in row {
                let _ = write!(out, " {v:>width$}");
            }
            out.push('\n');
        }
        let metrics = self.class_metrics();
        let mut numeric_row = |label: &str, f: &dyn Fn(&ClassMetrics) -> String| {
            let _ = write!(out, "{label:name_width$}");
            for m in &metrics {
                let _ = write!(out, " {:>width$}", f(m));
            }
            out.push('\n');
        };
        numeric_row("Total Found", &|m| m.predicted.to_string());
        numeric_row("True Positive", &|m| m.true_positive.to_string());
        numeric_row("Recall", &|m| format!("{:.2}", m.recall));
        numeric_row("Precision", &|m| format!("{:.2}", m.precision));
        numeric_row("F1-Score", &|m| format!("{:.2}", m.f1));
        out
    }
}

/// Correct attack detections rate over the given attack class indices:
/// summed attack diagonal over summed attack column totals. A 0/0 case
/// yields 0 with the degenerate flag set.
pub fn cad(matrix: &ConfusionMatrix, attack_classes: &[usize]) -> Cad {
    let tp: u64 = attack_classes.iter().map(|&c| matrix.counts()[c][c]).sum();
    let found: u64 = attack_classes.iter().map(|&c| matrix.column_sum(c)).sum();
    if found == 0 {
        Cad { value: 0.0, degenerate: true }
    } else {
        Cad { value: tp as f64 / found as f64, degenerate: false }
    }
}

// ── Whole-dataset evaluation ──────────────────────────────────────────────────

/// Run metadata attached to reports.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunMeta {
    pub seed: u64,
    pub model: String,
    pub dataset: String,
    pub window_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct MetricReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub cad: Cad,
    pub matrix: ConfusionMatrix,
    pub meta: RunMeta,
}

/// Indices of the non-benign classes in a vocabulary.
pub fn attack_class_indices(classes: &[String], benign: &str) -> Vec<usize> {
    classes.iter().enumerate().filter(|(_, c)| c.as_str() != benign).map(|(i, _)| i).collect()
}

/// Predict every sample and assemble the full metric report.
pub fn evaluate(params: &ModelParams, data: &Dataset, benign: &str, meta: RunMeta) -> Result<MetricReport, EvalError> {
    let truth: Vec<usize> = data.samples.iter().map(|s| s.label).collect();
    let pred: Vec<usize> = data.samples.iter().map(|s| params.predict(s)).collect();
    let matrix = ConfusionMatrix::from_predictions(&truth, &pred, &data.classes)?;
    let attacks = attack_class_indices(&data.classes, benign);
    Ok(MetricReport {
        accuracy: matrix.accuracy(),
        per_class: matrix.class_metrics(),
        cad: cad(&matrix, &attacks),
        matrix,
        meta,
    })
}

// ── Generalization protocol ───────────────────────────────────────────────────

/// Configuration for the cross-dataset experiments. Four seeds per experiment
/// by default.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub benign_class: String,
    /// Explicit projection of the attack classes scored on the test set.
    /// `None` derives it from the classes present in both datasets.
    pub shared_attacks: Option<Vec<String>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            seeds: vec![0, 1, 2, 3],
            benign_class: "Benign".into(),
            shared_attacks: None,
        }
    }
}

/// One generalization run: train-set accuracy, then untouched-test-set
/// metrics restricted to the attacks both sets share.
#[derive(Debug, Clone)]
pub struct GeneralizationRow {
    pub seed: u64,
    pub train_accuracy: f64,
    /// (class name, recall on the test set) for each shared attack class.
    pub shared_attack_recall: Vec<(String, f64)>,
    pub test_cad: Cad,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct GeneralizationReport {
    pub shared_attacks: Vec<String>,
    pub rows: Vec<GeneralizationRow>,
    pub warnings: Vec<String>,
}

fn present_classes(data: &Dataset) -> Vec<bool> {
    let mut present = vec![false; data.classes.len()];
    for s in &data.samples {
        present[s.label] = true;
    }
    present
}

/// Attack classes with support in both datasets.
pub fn shared_attack_classes(
    train_set: &Dataset,
    test_set: &Dataset,
    benign: &str,
) -> Result<Vec<usize>, EvalError> {
    if train_set.classes != test_set.classes {
        return Err(EvalError::VocabularyMismatch);
    }
    let a = present_classes(train_set);
    let b = present_classes(test_set);
    let shared: Vec<usize> = attack_class_indices(&train_set.classes, benign)
        .into_iter()
        .filter(|&c| a[c] && b[c])
        .collect();
    if shared.is_empty() {
        return Err(EvalError::NoSharedAttacks);
    }
    Ok(shared)
}

/// The configured shared-attack projection, or the derived one.
fn resolve_shared_attacks(
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &ExperimentConfig,
) -> Result<Vec<usize>, EvalError> {
    match &cfg.shared_attacks {
        None => shared_attack_classes(train_set, test_set, &cfg.benign_class),
        Some(names) => {
            if train_set.classes != test_set.classes {
                return Err(EvalError::VocabularyMismatch);
            }
            let mut indices = Vec::with_capacity(names.len());
            for name in names {
                let idx = train_set
                    .classes
                    .iter()
                    .position(|c| c == name && c != &cfg.benign_class)
                    .ok_or_else(|| EvalError::Model(ModelError::UnknownLabel(name.clone())))?;
                indices.push(idx);
            }
            if indices.is_empty() {
                return Err(EvalError::NoSharedAttacks);
            }
            Ok(indices)
        }
    }
}

fn build_and_train(
    spec: &crate::model::ModelSpec,
    data: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ModelParams, TrainOutcome), EvalError> {
    let columns = data.input_columns(spec);
    let mut params = ModelParams::build(spec, seed, Some(&columns))?;
    let mut cfg = cfg.clone();
    cfg.seed = seed;
    let outcome = train(&mut params, data, &cfg)?;
    Ok((params, outcome))
}

/// Train on the first dataset (internally split 80/20) and, per seed, report
/// accuracy over the entire first dataset plus recall/CAD/accuracy over the
/// entire second dataset without any further update.
pub fn run_generalization(
    train_set: &Dataset,
    test_set: &Dataset,
    spec: &crate::model::ModelSpec,
    cfg: &ExperimentConfig,
) -> Result<GeneralizationReport, EvalError> {
    let shared = resolve_shared_attacks(train_set, test_set, cfg)?;
    let attack_indices = attack_class_indices(&train_set.classes, &cfg.benign_class);
    let mut rows = Vec::with_capacity(cfg.seeds.len());
    let mut warnings = Vec::new();
    for &seed in &cfg.seeds {
        let (params, outcome) = build_and_train(spec, train_set, &cfg.train, seed)?;
        warnings.extend(outcome.warnings.iter().map(|w| format!("seed {seed}: {w}")));
        let train_accuracy = accuracy(&params, &train_set.samples);

        let truth: Vec<usize> = test_set.samples.iter().map(|s| s.label).collect();
        let pred: Vec<usize> = test_set.samples.iter().map(|s| params.predict(s)).collect();
        let matrix = ConfusionMatrix::from_predictions(&truth, &pred, &test_set.classes)?;
        let metrics = matrix.class_metrics();
        let shared_attack_recall = shared
            .iter()
            .map(|&c| (test_set.classes[c].clone(), metrics[c].recall))
            .collect();
        rows.push(GeneralizationRow {
            seed,
            train_accuracy,
            shared_attack_recall,
            test_cad: cad(&matrix, &attack_indices),
            test_accuracy: matrix.accuracy(),
        });
    }
    Ok(GeneralizationReport {
        shared_attacks: shared.iter().map(|&c| train_set.classes[c].clone()).collect(),
        rows,
        warnings,
    })
}

/// Generalization scoring of an already-trained model: one report row, no
/// parameter updates anywhere.
pub fn score_checkpoint_generalization(
    params: &ModelParams,
    train_set: &Dataset,
    test_set: &Dataset,
    seed: u64,
    benign: &str,
) -> Result<GeneralizationReport, EvalError> {
    let shared = shared_attack_classes(train_set, test_set, benign)?;
    let attack_indices = attack_class_indices(&train_set.classes, benign);
    let train_accuracy = accuracy(params, &train_set.samples);
    let truth: Vec<usize> = test_set.samples.iter().map(|s| s.label).collect();
    let pred: Vec<usize> = test_set.samples.iter().map(|s| params.predict(s)).collect();
    let matrix = ConfusionMatrix::from_predictions(&truth, &pred, &test_set.classes)?;
    let metrics = matrix.class_metrics();
    let row = GeneralizationRow {
        seed,
        train_accuracy,
        shared_attack_recall: shared
            .iter()
            .map(|&c| (test_set.classes[c].clone(), metrics[c].recall))
            .collect(),
        test_cad: cad(&matrix, &attack_indices),
        test_accuracy: matrix.accuracy(),
    };
    Ok(GeneralizationReport {
        shared_attacks: shared.iter().map(|&c| train_set.classes[c].clone()).collect(),
        rows: vec![row],
        warnings: vec![],
    })
}

impl GeneralizationReport {
    /// Table-shaped CSV: one row per seed.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let mut w = csv::WriterBuilder::new().from_path(path.as_ref())?;
        let mut header = vec!["seed".to_string(), "train_accuracy".to_string()];
        for a in &self.shared_attacks {
            header.push(format!("{a}_recall_test"));
        }
        header.push("cad_test".into());
        header.push("cad_degenerate".into());
        header.push("test_accuracy".into());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.seed.to_string(), row.train_accuracy.to_string()];
            for (_, r) in &row.shared_attack_recall {
                rec.push(r.to_string());
            }
            rec.push(row.test_cad.value.to_string());
            rec.push((row.test_cad.degenerate as u8).to_string());
            rec.push(row.test_accuracy.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| EvalError::Io(path.as_ref().display().to_string(), e))?;
        Ok(())
    }

    /// Min/mean/max of the numeric columns across seeds.
    pub fn write_summary_csv(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let mut columns: Vec<(String, Vec<f64>)> = vec![
            ("train_accuracy".into(), self.rows.iter().map(|r| r.train_accuracy).collect()),
        ];
        for (i, a) in self.shared_attacks.iter().enumerate() {
            columns.push((
                format!("{a}_recall_test"),
                self.rows.iter().map(|r| r.shared_attack_recall[i].1).collect(),
            ));
        }
        columns.push(("cad_test".into(), self.rows.iter().map(|r| r.test_cad.value).collect()));
        columns.push(("test_accuracy".into(), self.rows.iter().map(|r| r.test_accuracy).collect()));

        let mut w = csv::WriterBuilder::new().from_path(path.as_ref())?;
        w.write_record(["column", "min", "mean", "max"])?;
        for (name, values) in columns {
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
            w.write_record(&[name, min.to_string(), mean.to_string(), max.to_string()])?;
        }
        w.flush().map_err(|e| EvalError::Io(path.as_ref().display().to_string(), e))?;
        Ok(())
    }
}

// ── Retraining / forgetting protocol ──────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct RetrainConfig {
    pub base: ExperimentConfig,
    pub epochs_first: usize,
    pub epochs_second: usize,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        Self { base: ExperimentConfig::default(), epochs_first: 8, epochs_second: 4 }
    }
}

/// One retraining run: metrics after phase 1 (train on the first set) and
/// after phase 2 (continue on the second set), with the first set's
/// per-attack recall and CAD after phase 2.
#[derive(Debug, Clone)]
pub struct RetrainRow {
    pub seed: u64,
    pub phase1_first_accuracy: f64,
    pub phase1_second_accuracy: f64,
    pub phase2_second_accuracy: f64,
    pub phase2_first_accuracy: f64,
    pub first_attack_recall: Vec<(String, f64)>,
    pub first_cad: Cad,
}

#[derive(Debug, Clone)]
pub struct RetrainReport {
    pub shared_attacks: Vec<String>,
    pub rows: Vec<RetrainRow>,
    pub warnings: Vec<String>,
}

/// Phase 1: train `epochs_first` on the first set. Phase 2: continue the same
/// parameters for `epochs_second` on the second set. Both phases measure both
/// sets in full.
pub fn run_retraining(
    first: &Dataset,
    second: &Dataset,
    spec: &crate::model::ModelSpec,
    cfg: &RetrainConfig,
) -> Result<RetrainReport, EvalError> {
    let shared = resolve_shared_attacks(first, second, &cfg.base)?;
    let attack_indices = attack_class_indices(&first.classes, &cfg.base.benign_class);
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for &seed in &cfg.base.seeds {
        let mut phase1_cfg = cfg.base.train.clone();
        phase1_cfg.epochs = cfg.epochs_first;
        let (mut params, out1) = build_and_train(spec, first, &phase1_cfg, seed)?;
        warnings.extend(out1.warnings.iter().map(|w| format!("seed {seed} phase 1: {w}")));
        let phase1_first_accuracy = accuracy(&params, &first.samples);
        let phase1_second_accuracy = accuracy(&params, &second.samples);

        let mut phase2_cfg = cfg.base.train.clone();
        phase2_cfg.epochs = cfg.epochs_second;
        // distinct shuffle stream for the second phase
        phase2_cfg.seed = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let out2 = train(&mut params, second, &phase2_cfg)?;
        warnings.extend(out2.warnings.iter().map(|w| format!("seed {seed} phase 2: {w}")));

        let phase2_second_accuracy = accuracy(&params, &second.samples);
        let truth: Vec<usize> = first.samples.iter().map(|s| s.label).collect();
        let pred: Vec<usize> = first.samples.iter().map(|s| params.predict(s)).collect();
        let matrix = ConfusionMatrix::from_predictions(&truth, &pred, &first.classes)?;
        let metrics = matrix.class_metrics();
        rows.push(RetrainRow {
            seed,
            phase1_first_accuracy,
            phase1_second_accuracy,
            phase2_second_accuracy,
            phase2_first_accuracy: matrix.accuracy(),
            first_attack_recall: shared.iter().map(|&c| (first.classes[c].clone(), metrics[c].recall)).collect(),
            first_cad: cad(&matrix, &attack_indices),
        });
    }
    Ok(RetrainReport {
        shared_attacks: shared.iter().map(|&c| first.classes[c].clone()).collect(),
        rows,
        warnings,
    })
}

impl RetrainReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let mut w = csv::WriterBuilder::new().from_path(path.as_ref())?;
        let mut header = vec![
            "seed".to_string(),
            "phase1_first_accuracy".to_string(),
            "phase1_second_accuracy".to_string(),
            "phase2_second_accuracy".to_string(),
            "phase2_first_accuracy".to_string(),
        ];
        for a in &self.shared_attacks {
            header.push(format!("{a}_recall_first"));
        }
        header.push("cad_first".into());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![
                row.seed.to_string(),
                row.phase1_first_accuracy.to_string(),
                row.phase1_second_accuracy.to_string(),
                row.phase2_second_accuracy.to_string(),
                row.phase2_first_accuracy.to_string(),
            ];
            for (_, r) in &row.first_attack_recall {
                rec.push(r.to_string());
            }
            rec.push(row.first_cad.value.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| EvalError::Io(path.as_ref().display().to_string(), e))?;
        Ok(())
    }
}
