//! Command-line front end for the flow-window intrusion detection pipeline.
//!
//! Subcommands: `synth`, `window`, `featurize`, `train`, `eval`,
//! `generalize`, `retrain`. Every run writes a `manifest.json` with the
//! resolved configuration next to its outputs, so a run can be reproduced
//! from its output directory alone.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use twnet::activations;
use twnet::eval::{evaluate, ExperimentConfig, RetrainConfig, RunMeta};
use twnet::features::{extract, read_feature_csv, write_feature_csv, FeatureVector};
use twnet::ingest::{
    class_table, read_records, sort_by_timestamp, write_canonical_csv, DatasetSchema,
};
use twnet::model::{
    classes_from_rows, load_checkpoint, parse_spec_name, save_checkpoint, train, write_metrics_csv,
    ActivationParams, AdamWConfig, Checkpoint, Dataset, ModelParams, ModelSpec, TrainConfig,
};
use twnet::synth::{builtin_profiles, generate, generate_with_counts, profiles_from_file, TrafficProfile};
use twnet::window::{WindowConfig, WindowEngine, WindowedWriter};

#[derive(Parser)]
#[command(name = "twnet", version, about = "Flow-window network intrusion detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic flow stream
    Synth(SynthArgs),
    /// Slide the per-host time window over a sorted flow CSV
    Window(WindowArgs),
    /// Derive feature vectors from windowed samples
    Featurize(FeaturizeArgs),
    /// Train a model on a feature file
    Train(TrainArgs),
    /// Evaluate a checkpoint on a feature file
    Eval(EvalArgs),
    /// Train on one dataset, score another without fine-tuning
    Generalize(GeneralizeArgs),
    /// Two-phase retraining with forgetting metrics
    Retrain(RetrainArgs),
}

/// Key=value config file merged under explicit flags: a flag wins over the
/// config file, the config file wins over built-in defaults.
#[derive(Args)]
struct Common {
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
    /// Optional key=value config file supplying unset flags
    #[arg(long)]
    config: Option<PathBuf>,
}

struct Resolver {
    config: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
    defaulted: Vec<String>,
}

impl Resolver {
    fn new(config_path: Option<&Path>) -> Result<Self> {
        let mut config = BTreeMap::new();
        if let Some(path) = config_path {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .with_context(|| format!("config line {}: expected key = value", lineno + 1))?;
                config.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Self { config, resolved: BTreeMap::new(), defaulted: Vec::new() })
    }

    /// Resolve one setting: explicit flag, then config file, then default.
    fn value<T: std::str::FromStr + ToString>(
        &mut self,
        key: &str,
        flag: Option<T>,
        default: T,
    ) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let (value, from_default) = match flag {
            Some(v) => (v, false),
            None => match self.config.get(key) {
                Some(raw) => (
                    raw.parse::<T>().map_err(|e| anyhow::anyhow!("config `{key}`: {e}"))?,
                    false,
                ),
                None => (default, true),
            },
        };
        self.resolved.insert(key.to_string(), value.to_string());
        if from_default {
            self.defaulted.push(key.to_string());
        }
        Ok(value)
    }

    fn note(&mut self, key: &str, value: impl ToString) {
        self.resolved.insert(key.to_string(), value.to_string());
    }
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    args: BTreeMap<String, String>,
    /// Settings that fell back to built-in defaults (not pinned by flag or
    /// config file).
    defaulted: Vec<String>,
    outputs: Vec<String>,
}

fn write_manifest(out_dir: &Path, command: &str, resolver: Resolver, outputs: &[&Path]) -> Result<()> {
    let manifest = Manifest {
        command: command.to_string(),
        args: resolver.resolved,
        defaulted: resolver.defaulted,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn ensure_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(args) => cmd_synth(args),
        Command::Window(args) => cmd_window(args),
        Command::Featurize(args) => cmd_featurize(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Generalize(args) => cmd_generalize(args),
        Command::Retrain(args) => cmd_retrain(args),
    }
}

// ── synth ─────────────────────────────────────────────────────────────────────

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Built-in profile set (standard, shifted-benign) or a profile file path
    #[arg(long)]
    profiles: Option<String>,
    /// Capture length in seconds
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Exact per-class flow counts, e.g. `Benign=1000,DoS=50` (rates ignored)
    #[arg(long)]
    counts: Option<String>,
}

fn load_profiles(spec: &str) -> Result<Vec<TrafficProfile>> {
    if Path::new(spec).exists() {
        Ok(profiles_from_file(spec)?)
    } else {
        Ok(builtin_profiles(spec)?)
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    ensure_out(&args.common.out)?;
    let mut r = Resolver::new(args.common.config.as_deref())?;
    let profiles_arg = r.value("profiles", args.profiles, "standard".to_string())?;
    let duration = r.value("duration", args.duration, 60.0)?;
    let seed = r.value("seed", args.seed, 0u64)?;
    let counts_arg = r.value("counts", args.counts, String::new())?;

    let profiles = load_profiles(&profiles_arg)?;
    let flows = if counts_arg.is_empty() {
        generate(&profiles, duration, seed)?
    } else {
        let mut requests = Vec::new();
        for part in counts_arg.split(',') {
            let (label, count) = part
                .split_once('=')
                .with_context(|| format!("bad counts entry `{part}` (expected Label=count)"))?;
            let profile = profiles
                .iter()
                .find(|p| p.label == label.trim())
                .with_context(|| format!("no profile labeled `{}`", label.trim()))?;
            requests.push((profile.clone(), count.trim().parse::<u64>()?));
        }
        generate_with_counts(&requests, duration, seed)?
    };

    let flows_path = args.common.out.join("flows.csv");
    write_canonical_csv(&flows_path, &flows)?;
    println!("{} flows -> {}", flows.len(), flows_path.display());
    for (class, count) in class_table(&flows) {
        println!("  {class}: {count}");
    }
    write_manifest(&args.common.out, "synth", r, &[&flows_path])
}

// ── window ────────────────────────────────────────────────────────────────────

#[derive(Args)]
struct WindowArgs {
    #[command(flatten)]
    common: Common,
    /// Input flow CSV
    #[arg(long)]
    input: PathBuf,
    /// Schema file; the harmonized format is assumed when omitted
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    window_seconds: Option<f64>,
    /// Bound on tracked hosts (least-recently-anchored hosts spill)
    #[arg(long)]
    max_hosts: Option<usize>,
    /// Sort rows by timestamp before processing instead of requiring order
    #[arg(long)]
    sort: bool,
    /// Also write per-sample in-window mean aggregates (diagnostics)
    #[arg(long)]
    with_averages: bool,
}

fn cmd_window(args: WindowArgs) -> Result<()> {
    ensure_out(&args.common.out)?;
    let mut r = Resolver::new(args.common.config.as_deref())?;
    let window_seconds = r.value("window_seconds", args.window_seconds, 60.0)?;
    let max_hosts = args.max_hosts;
    r.note("input", args.input.display());
    r.note("sort", args.sort);
    r.note("max_hosts", max_hosts.map(|m| m.to_string()).unwrap_or_else(|| "none".into()));

    let schema = match &args.schema {
        Some(path) => {
            r.note("schema", path.display());
            DatasetSchema::from_file(path)?
        }
        None => DatasetSchema::canonical(),
    };

    let config = WindowConfig { window_seconds, max_hosts };
    let mut engine = WindowEngine::new(config)?;
    let windowed_path = args.common.out.join("windowed.csv");
    let mut writer = WindowedWriter::create(&windowed_path)?;
    let mut aggr_writer = if args.with_averages {
        let mut w = csv::WriterBuilder::new().from_path(args.common.out.join("averages.csv"))?;
        w.write_record([
            "index",
            "src_duration",
            "src_packets_out",
            "src_packets_in",
            "src_bytes_out",
            "src_bytes_in",
            "dst_duration",
            "dst_packets_out",
            "dst_packets_in",
            "dst_bytes_out",
            "dst_bytes_in",
        ])?;
        Some(w)
    } else {
        None
    };

    let mut table: BTreeMap<String, u64> = BTreeMap::new();
    let mut samples = 0u64;
    {
        let mut process = |record: twnet::ingest::FlowRecord| -> Result<()> {
            *table.entry(record.label.clone()).or_insert(0) += 1;
            if let Some(w) = aggr_writer.as_mut() {
                let (sample, aggr) = engine.push_with_aggregates(record)?;
                writer.write(&sample)?;
                let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                let s = aggr.src;
                let d = aggr.dst;
                w.write_record(&[
                    samples.to_string(),
                    fmt(s.map(|a| a.duration)),
                    fmt(s.map(|a| a.packets_out)),
                    fmt(s.map(|a| a.packets_in)),
                    fmt(s.map(|a| a.bytes_out)),
                    fmt(s.map(|a| a.bytes_in)),
                    fmt(d.map(|a| a.duration)),
                    fmt(d.map(|a| a.packets_out)),
                    fmt(d.map(|a| a.packets_in)),
                    fmt(d.map(|a| a.bytes_out)),
                    fmt(d.map(|a| a.bytes_in)),
                ])?;
            } else {
                let sample = engine.push(record)?;
                writer.write(&sample)?;
            }
            samples += 1;
            Ok(())
        };

        let report_skips = |skipped: u64, examples: &[String]| {
            if skipped > 0 {
                eprintln!("skipped {skipped} malformed rows, e.g.:");
                for reason in examples {
                    eprintln!("  {reason}");
                }
            }
        };
        if args.sort {
            // sorting needs the whole file in memory
            let mut outcome = read_records(&args.input, &schema)?;
            sort_by_timestamp(&mut outcome.records);
            report_skips(outcome.rows_skipped, &outcome.skip_examples);
            for record in outcome.records {
                process(record)?;
            }
        } else {
            // order is verified as the rows stream through; memory stays bounded
            let mut reader = twnet::ingest::RecordReader::open(&args.input, &schema)?;
            for result in &mut reader {
                process(result?)?;
            }
            report_skips(reader.rows_skipped(), reader.skip_examples());
        }
    }
    writer.finish()?;
    if let Some(mut w) = aggr_writer {
        w.flush()?;
    }

    println!("hosts: {}", engine.host_count());
    println!("samples: {samples} -> {}", windowed_path.display());
    if engine.self_flow_count() > 0 {
        println!("self-flows (src = dst): {}", engine.self_flow_count());
    }
    if engine.spilled_host_count() > 0 {
        println!("hosts spilled by capacity bound: {}", engine.spilled_host_count());
    }
    for (class, count) in table {
        println!("  {class}: {count}");
    }
    write_manifest(&args.common.out, "window", r, &[&windowed_path])
}

// ── featurize ─────────────────────────────────────────────────────────────────

#[derive(Args)]
struct FeaturizeArgs {
    #[command(flatten)]
    common: Common,
    /// Windowed-sample CSV
    #[arg(long)]
    input: PathBuf,
}

fn cmd_featurize(args: FeaturizeArgs) -> Result<()> {
    ensure_out(&args.common.out)?;
    let mut r = Resolver::new(args.common.config.as_deref())?;
    r.note("input", args.input.display());
    let samples = twnet::window::read_windowed_csv(&args.input)?;
    let mut rows = Vec::with_capacity(samples.len());
    for s in &samples {
        rows.push((extract(s)?, s.flow.label.clone()));
    }
    let features_path = args.common.out.join("features.csv");
    write_feature_csv(&features_path, &rows)?;
    println!("{} feature rows -> {}", rows.len(), features_path.display());
    write_manifest(&args.common.out, "featurize", r, &[&features_path])
}

// ── train ─────────────────────────────────────────────────────────────────────

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Labeled feature CSV
    #[arg(long)]
    features: PathBuf,
    /// Model spec: preset name like twnet5{32,16} or a JSON spec file
    #[arg(long)]
    spec: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Window length provenance recorded in the checkpoint
    #[arg(long)]
    window_seconds: Option<f64>,
    /// Class vocabulary override (comma-separated); defaults to the sorted
    /// labels present in the feature file
    #[arg(long)]
    classes: Option<String>,
}

struct TrainSetup {
    spec: ModelSpec,
    data: Dataset,
    cfg: TrainConfig,
    window_seconds: f64,
}

fn resolve_spec(spec_arg: &str, class_count: usize) -> Result<ModelSpec> {
    if Path::new(spec_arg).exists() {
        let spec = ModelSpec::from_file(spec_arg)?;
        if spec.class_count != class_count {
            bail!(
                "spec file expects {} classes but the dataset vocabulary has {class_count}",
                spec.class_count
            );
        }
        Ok(spec)
    } else {
        Ok(parse_spec_name(spec_arg, class_count)?)
    }
}

fn resolve_classes(
    override_arg: &str,
    rows: &[(FeatureVector, String)],
) -> Vec<String> {
    if override_arg.is_empty() {
        classes_from_rows(rows)
    } else {
        override_arg.split(',').map(|c| c.trim().to_string()).collect()
    }
}

fn train_setup(args: &TrainArgs, r: &mut Resolver) -> Result<TrainSetup> {
    let spec_arg = r.value("spec", args.spec.clone(), "twnet5{32,16}".to_string())?;
    let epochs = r.value("epochs", args.epochs, 8usize)?;
    let batch_size = r.value("batch_size", args.batch_size, 512usize)?;
    let lr = r.value("lr", args.lr, 5e-4)?;
    let weight_decay = r.value("weight_decay", args.weight_decay, 1e-5)?;
    let seed = r.value("seed", args.seed, 0u64)?;
    let window_seconds = r.value("window_seconds", args.window_seconds, 60.0)?;
    let classes_arg = r.value("classes", args.classes.clone(), String::new())?;
    r.note("features", args.features.display());

    let rows = read_feature_csv(&args.features)?;
    let classes = resolve_classes(&classes_arg, &rows);
    let spec = resolve_spec(&spec_arg, classes.len())?;
    let data = Dataset::prepare(&rows, &spec, classes)?;
    let cfg = TrainConfig {
        epochs,
        batch_size,
        optimizer: AdamWConfig { lr, weight_decay, ..AdamWConfig::default() },
        seed,
        ..TrainConfig::default()
    };
    Ok(TrainSetup { spec, data, cfg, window_seconds })
}

/// Per-feature activation curves on a grid spanning each input's data range.
fn write_activation_curves(path: &Path, params: &ModelParams, data: &Dataset) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_path(path)?;
    w.write_record(["input", "feature", "x", "y"])?;
    for (j, act) in params.activations.iter().enumerate() {
        if matches!(act, ActivationParams::Identity) {
            continue;
        }
        let column = data.input_column(j);
        let lo = column.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if lo < hi { (lo, hi) } else { (lo - 1.0, hi + 1.0) };
        let pad = 0.05 * (hi - lo);
        let feature_name: String = params.spec.inputs[j].feature.into();
        for (x, y) in activations::curve(|x| act.eval(x), lo - pad, hi + pad, 101) {
            w.write_record(&[j.to_string(), feature_name.clone(), x.to_string(), y.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    ensure_out(&args.common.out)?;
    let mut r = Resolver::new(args.common.config.as_deref())?;
    let setup = train_setup(&args, &mut r)?;

    let columns = setup.data.input_columns(&setup.spec);
    let mut params = ModelParams::build(&setup.spec, setup.cfg.seed, Some(&columns))?;
    let outcome = train(&mut params, &setup.data, &setup.cfg)?;
    for warning in &outcome.warnings {
        eprintln!("warning: {warning}");
    }
    for m in &outcome.metrics {
        let eval = m.eval_acc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into());
        println!(
            "epoch {:>3}  loss {:.6}  train_acc {:.4}  eval_acc {eval}  ({:.2}s)",
            m.epoch, m.train_loss, m.train_acc, m.wall_time_s
        );
    }

    let checkpoint_path = args.common.out.join("checkpoint.json");
    let metrics_path = args.common.out.join("metrics.csv");
    let curves_path = args.common.out.join("activation_curves.csv");
    write_activation_curves(&curves_path, &params, &setup.data)?;
    let checkpoint = Checkpoint::new(params, setup.data.classes.clone(), setup.window_seconds, setup.cfg.seed);
    save_checkpoint(&checkpoint_path, &checkpoint)?;
    write_metrics_csv(&metrics_path, &outcome.metrics)?;
    println!("checkpoint -> {}", checkpoint_path.display());
    write_manifest(&args.common.out, "train", r, &[&checkpoint_path, &metrics_path, &curves_path])
}

// ── eval ──────────────────────────────────────────────────────────────────────

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    benign_class: Option<String>,
}

fn write_report_csv(path: &Path, report: &twnet::eval::MetricReport) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_path(path)?;
    w.write_record(["class", "support", "predicted", "recall", "precision", "f1", "degenerate"])?;
    for m in &report.per_class {
        w.write_record(&[
            m.class.clone(),
            m.support.to_string(),
            m.predicted.to_string(),
            m.recall.to_string(),
            m.precision.to_string(),
            m.f1.to_string(),
            (m.degenerate as u8).to_string(),
        ])?;
    }
    w.write_record(["accuracy", "", "", "", "", &report.accuracy.to_string(), ""])?;
    w.write_record(["cad", "", "", "", "", &report.cad.value.to_string(), &(report.cad.degenerate as u8).to_string()])?;
    w.flush()?;
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    ensure_out(&args.common.out)?;
    let mut r = Resolver::new(args.common.config.as_deref())?;
    let benign = r.value("benign_class", args.benign_class, "Benign".to_string())?;
    r.note("checkpoint", args.checkpoint.display());
    r.note("features", args.features.display());

    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let rows = read_feature_csv(&args.features)?;
    let data = Dataset::prepare(&rows, &checkpoint.params.spec, checkpoint.classes.clone())?;
    let meta = RunMeta {
        seed: checkpoint.seed,
        model: checkpoint.params.spec.name.clone(),
        dataset: args.features.display().to_string(),
        window_seconds: checkpoint.window_seconds,
    };
    let report = evaluate(&checkpoint.params, &data, &benign, meta)?;

    let report_path = args.common.out.join("report.csv");
    let confusion_path = args.common.out.join("confusion.txt");
    write_report_csv(&report_path, &report)?;
    std::fs::write(&confusion_path, report.matrix.render_text())?;
    println!("accuracy {:.4}  cad {:.4}", report.accuracy, report.cad.value);
    println!("report -> {}", report_path.display());
    write_manifest(&args.common.out, "eval", r, &[&report_path, &confusion_path])
}

// ── generalize ────────────────────────────────────────────────────────────────

#[derive(Args)]
struct GeneralizeArgs {
    #[command(flatten)]
    common: Common,
    /// Feature CSV the model trains on
    #[arg(long)]
    train_features: PathBuf,
    /// Feature CSV scored without any fine-tuning
    #[arg(long)]
    test_features: PathBuf,
    /// Model spec (preset name or JSON file); mutually exclusive with --checkpoint
    #[arg(long)]
    spec: Option<String>,
    /// Evaluate an existing checkpoint instead of training per seed
    #[arg(long, conflicts_with = "spec")]
    checkpoint: Option<PathBuf>,
    /// Comma-separated seeds, one run each
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    benign_class: Option<String>,
    /// Restrict test-set attack scoring to these classes (comma-separated);
    /// defaults to the attacks present in both datasets
    #[arg(long)]
    shared_attacks: Option<String>,
}

fn parse_seeds(arg: &str) -> Result<Vec<u64>> {
    arg.split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|e| anyhow::anyhow!("bad seed `{s}`: {e}")))
        .collect()
}

/// Shared vocabulary across two labeled feature sets: sorted union.
fn union_classes(a: &[(FeatureVector, String)], b: &[(FeatureVector, String)]) -> Vec<String> {
    let mut classes: Vec<String> =
        a.iter().chain(b.iter()).map(|(_, label)| label.clone()).collect();
    classes.sort();
    classes.dedup();
    classes
}

fn cmd_generalize(args: GeneralizeArgs) -> Result<()> {
    ensure_out(&args.common.out)?;
    let mut r = Resolver::new(args.common.config.as_deref())?;
    let seeds_arg = r.value("seeds", args.seeds, "0,1,2,3".to_string())?;
    let epochs = r.value("epochs", args.epochs, 8usize)?;
    let batch_size = r.value("batch_size", args.batch_size, 512usize)?;
    let lr = r.value("lr", args.lr, 5e-4)?;
    let weight_decay = r.value("weight_decay", args.weight_decay, 1e-5)?;
    let benign = r.value("benign_class", args.benign_class, "Benign".to_string())?;
    let shared_arg = r.value("shared_attacks", args.shared_attacks, String::new())?;
    let shared_attacks = (!shared_arg.is_empty())
        .then(|| shared_arg.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>());
    r.note("train_features", args.train_features.display());
    r.note("test_features", args.test_features.display());

    let train_rows = read_feature_csv(&args.train_features)?;
    let test_rows = read_feature_csv(&args.test_features)?;
    let classes = union_classes(&train_rows, &test_rows);

    let report_path = args.common.out.join("report.csv");
    let summary_path = args.common.out.join("summary.csv");

    let report = if let Some(ckpt_path) = &args.checkpoint {
        r.note("checkpoint", ckpt_path.display());
        let checkpoint = load_checkpoint(ckpt_path)?;
        let train_data = Dataset::prepare(&train_rows, &checkpoint.params.spec, checkpoint.classes.clone())?;
        let test_data = Dataset::prepare(&test_rows, &checkpoint.params.spec, checkpoint.classes.clone())?;
        twnet::eval::score_checkpoint_generalization(&checkpoint.params, &train_data, &test_data, checkpoint.seed, &benign)?
    } else {
        let spec_arg = r.value("spec", args.spec.clone(), "twnet5{32,16}".to_string())?;
        let spec = resolve_spec(&spec_arg, classes.len())?;
        let train_data = Dataset::prepare(&train_rows, &spec, classes.clone())?;
        let test_data = Dataset::prepare(&test_rows, &spec, classes)?;
        let cfg = ExperimentConfig {
            train: TrainConfig {
                epochs,
                batch_size,
                optimizer: AdamWConfig { lr, weight_decay, ..AdamWConfig::default() },
                ..TrainConfig::default()
            },
            seeds: parse_seeds(&seeds_arg)?,
            benign_class: benign.clone(),
            shared_attacks,
        };
        twnet::eval::run_generalization(&train_data, &test_data, &spec, &cfg)?
    };

    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    for row in &report.rows {
        println!(
            "seed {:>3}  train_acc {:.4}  test_acc {:.4}  cad {:.4}",
            row.seed, row.train_accuracy, row.test_accuracy, row.test_cad.value
        );
    }
    report.write_csv(&report_path)?;
    report.write_summary_csv(&summary_path)?;
    println!("report -> {}", report_path.display());
    write_manifest(&args.common.out, "generalize", r, &[&report_path, &summary_path])
}

// ── retrain ───────────────────────────────────────────────────────────────────

#[derive(Args)]
struct RetrainArgs {
    #[command(flatten)]
    common: Common,
    /// First-phase feature CSV
    #[arg(long)]
    first: PathBuf,
    /// Second-phase feature CSV
    #[arg(long)]
    second: PathBuf,
    #[arg(long)]
    spec: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    epochs_first: Option<usize>,
    #[arg(long)]
    epochs_second: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    benign_class: Option<String>,
}

fn cmd_retrain(args: RetrainArgs) -> Result<()> {
    ensure_out(&args.common.out)?;
    let mut r = Resolver::new(args.common.config.as_deref())?;
    let spec_arg = r.value("spec", args.spec.clone(), "twnet5{32,16}".to_string())?;
    let seeds_arg = r.value("seeds", args.seeds, "0,1,2,3".to_string())?;
    let epochs_first = r.value("epochs_first", args.epochs_first, 8usize)?;
    let epochs_second = r.value("epochs_second", args.epochs_second, 4usize)?;
    let batch_size = r.value("batch_size", args.batch_size, 512usize)?;
    let lr = r.value("lr", args.lr, 5e-4)?;
    let weight_decay = r.value("weight_decay", args.weight_decay, 1e-5)?;
    let benign = r.value("benign_class", args.benign_class, "Benign".to_string())?;
    r.note("first", args.first.display());
    r.note("second", args.second.display());

    let first_rows = read_feature_csv(&args.first)?;
    let second_rows = read_feature_csv(&args.second)?;
    let classes = union_classes(&first_rows, &second_rows);
    let spec = resolve_spec(&spec_arg, classes.len())?;
    let first = Dataset::prepare(&first_rows, &spec, classes.clone())?;
    let second = Dataset::prepare(&second_rows, &spec, classes)?;

    let cfg = RetrainConfig {
        base: ExperimentConfig {
            train: TrainConfig {
                epochs: epochs_first,
                batch_size,
                optimizer: AdamWConfig { lr, weight_decay, ..AdamWConfig::default() },
                ..TrainConfig::default()
            },
            seeds: parse_seeds(&seeds_arg)?,
            benign_class: benign,
            shared_attacks: None,
        },
        epochs_first,
        epochs_second,
    };
    let report = twnet::eval::run_retraining(&first, &second, &spec, &cfg)?;
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    for row in &report.rows {
        println!(
            "seed {:>3}  phase1 first {:.4} second {:.4} | phase2 second {:.4} first {:.4}",
            row.seed,
            row.phase1_first_accuracy,
            row.phase1_second_accuracy,
            row.phase2_second_accuracy,
            row.phase2_first_accuracy
        );
    }
    let report_path = args.common.out.join("report.csv");
    report.write_csv(&report_path)?;
    println!("report -> {}", report_path.display());
    write_manifest(&args.common.out, "retrain", r, &[&report_path])
}
