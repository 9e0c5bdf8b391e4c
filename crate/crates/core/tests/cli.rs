//! Drives the installed binary end to end: exit codes, file outputs, and the
//! reproducibility contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn twnet() -> Command {
    Command::new(env!("CARGO_BIN_EXE_twnet"))
}

fn run(args: &[&str]) -> Output {
    twnet().args(args).output().expect("spawn twnet")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

const TOY_CSV: &str = "\
timestamp,src_ip,src_port,dst_ip,dst_port,protocol,duration,src_packets,dst_packets,src_bytes,dst_bytes,label
1.0,A,5000,B,80,TCP,0.5,3,2,300,200,Benign
2.0,A,5001,B,80,TCP,0.5,3,2,300,200,Benign
3.0,C,6000,B,443,TCP,0.1,1,1,60,60,DoS
";

#[test]
fn window_processes_a_toy_csv() {
    let ws = Workspace::new();
    let input = ws.path("flows.csv");
    std::fs::write(&input, TOY_CSV).unwrap();
    let out_dir = ws.path("win");
    let out = run(&[
        "window",
        "--input",
        path_str(&input),
        "--out",
        path_str(&out_dir),
        "--window-seconds",
        "60",
    ]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("samples: 3"));
    assert!(stdout.contains("hosts: 3"));
    assert!(stdout.contains("Benign: 2"));
    assert!(out_dir.join("windowed.csv").exists());
    assert!(out_dir.join("manifest.json").exists());
}

#[test]
fn unsorted_input_fails_without_sort_flag() {
    let ws = Workspace::new();
    let input = ws.path("flows.csv");
    let unsorted = TOY_CSV.replace("1.0,A", "9.0,A");
    std::fs::write(&input, unsorted).unwrap();
    let out_dir = ws.path("win");
    let out = run(&["window", "--input", path_str(&input), "--out", path_str(&out_dir)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sorted"));

    // --sort repairs the order
    let out = run(&["window", "--input", path_str(&input), "--out", path_str(&out_dir), "--sort"]);
    assert_ok(&out);
}

#[test]
fn full_pipeline_produces_expected_artifacts() {
    let ws = Workspace::new();
    let synth_dir = ws.path("synth");
    assert_ok(&run(&[
        "synth",
        "--out",
        path_str(&synth_dir),
        "--duration",
        "30",
        "--seed",
        "5",
        "--counts",
        "Benign=1500,DoS=2500,PortScan=1500",
    ]));
    let win_dir = ws.path("win");
    assert_ok(&run(&[
        "window",
        "--input",
        path_str(&synth_dir.join("flows.csv")),
        "--out",
        path_str(&win_dir),
        "--with-averages",
    ]));
    assert!(win_dir.join("averages.csv").exists());
    let feat_dir = ws.path("feat");
    assert_ok(&run(&[
        "featurize",
        "--input",
        path_str(&win_dir.join("windowed.csv")),
        "--out",
        path_str(&feat_dir),
    ]));
    let model_dir = ws.path("model");
    assert_ok(&run(&[
        "train",
        "--features",
        path_str(&feat_dir.join("features.csv")),
        "--spec",
        "twnet4{0}",
        "--epochs",
        "2",
        "--batch-size",
        "64",
        "--seed",
        "1",
        "--out",
        path_str(&model_dir),
    ]));
    assert!(model_dir.join("checkpoint.json").exists());
    assert!(model_dir.join("metrics.csv").exists());
    assert!(model_dir.join("activation_curves.csv").exists());

    let eval_dir = ws.path("eval");
    assert_ok(&run(&[
        "eval",
        "--checkpoint",
        path_str(&model_dir.join("checkpoint.json")),
        "--features",
        path_str(&feat_dir.join("features.csv")),
        "--out",
        path_str(&eval_dir),
    ]));
    assert!(eval_dir.join("report.csv").exists());
    let confusion = std::fs::read_to_string(eval_dir.join("confusion.txt")).unwrap();
    assert!(confusion.contains("Recall"));

    // metrics stream has the documented columns
    let metrics = std::fs::read_to_string(model_dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,train_loss,train_acc,eval_acc,wall_time"));
}

#[test]
fn train_with_zero_epochs_checkpoints_the_initialization() {
    let ws = Workspace::new();
    let synth_dir = ws.path("synth");
    assert_ok(&run(&[
        "synth",
        "--out",
        path_str(&synth_dir),
        "--duration",
        "20",
        "--seed",
        "2",
        "--counts",
        "Benign=400,DoS=400",
    ]));
    let win_dir = ws.path("win");
    assert_ok(&run(&[
        "window",
        "--input",
        path_str(&synth_dir.join("flows.csv")),
        "--out",
        path_str(&win_dir),
    ]));
    let feat_dir = ws.path("feat");
    assert_ok(&run(&[
        "featurize",
        "--input",
        path_str(&win_dir.join("windowed.csv")),
        "--out",
        path_str(&feat_dir),
    ]));
    let run_train = |out_name: &str, epochs: &str| {
        let dir = ws.path(out_name);
        assert_ok(&run(&[
            "train",
            "--features",
            path_str(&feat_dir.join("features.csv")),
            "--spec",
            "twnet3{0}",
            "--epochs",
            epochs,
            "--seed",
            "7",
            "--out",
            path_str(&dir),
        ]));
        std::fs::read(dir.join("checkpoint.json")).unwrap()
    };
    let zero_a = run_train("m0a", "0");
    let zero_b = run_train("m0b", "0");
    let one = run_train("m1", "1");
    assert_eq!(zero_a, zero_b);
    assert_ne!(zero_a, one);
    // zero-epoch metrics stream is empty apart from the header
    let metrics = std::fs::read_to_string(ws.path("m0a").join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1);
}

#[test]
fn generalize_without_shared_attacks_fails() {
    let ws = Workspace::new();
    // Benign+DoS in one set, Benign+PortScan in the other
    let synth_a = ws.path("a");
    assert_ok(&run(&[
        "synth", "--out", path_str(&synth_a), "--duration", "20", "--seed", "3", "--counts", "Benign=300,DoS=300",
    ]));
    let synth_b = ws.path("b");
    assert_ok(&run(&[
        "synth", "--out", path_str(&synth_b), "--duration", "20", "--seed", "4", "--counts", "Benign=300,PortScan=300",
    ]));
    let prep = |dir: &Path, name: &str| {
        let win = ws.path(&format!("{name}_win"));
        assert_ok(&run(&["window", "--input", path_str(&dir.join("flows.csv")), "--out", path_str(&win)]));
        let feat = ws.path(&format!("{name}_feat"));
        assert_ok(&run(&["featurize", "--input", path_str(&win.join("windowed.csv")), "--out", path_str(&feat)]));
        feat.join("features.csv")
    };
    let feat_a = prep(&synth_a, "a");
    let feat_b = prep(&synth_b, "b");
    let out = run(&[
        "generalize",
        "--train-features",
        path_str(&feat_a),
        "--test-features",
        path_str(&feat_b),
        "--spec",
        "twnet3{0}",
        "--seeds",
        "0",
        "--epochs",
        "1",
        "--out",
        path_str(&ws.path("gen")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("share no attack classes"));
}

#[test]
fn config_file_fills_unset_flags_and_flags_win() {
    let ws = Workspace::new();
    let config = ws.path("run.conf");
    std::fs::write(&config, "duration = 15\nseed = 9\ncounts = Benign=200,DoS=100\n").unwrap();
    // seed from the flag, duration and counts from the config
    let out_dir = ws.path("synth");
    assert_ok(&run(&[
        "synth",
        "--out",
        path_str(&out_dir),
        "--config",
        path_str(&config),
        "--seed",
        "1",
    ]));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["args"]["seed"], "1");
    assert_eq!(manifest["args"]["duration"], "15");
    let defaulted: Vec<String> = manifest["defaulted"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    assert!(defaulted.contains(&"profiles".to_string()));
    assert!(!defaulted.contains(&"duration".to_string()));
    assert!(!defaulted.contains(&"seed".to_string()));
    let stdout = String::from_utf8_lossy(&run(&[
        "window",
        "--input",
        path_str(&out_dir.join("flows.csv")),
        "--out",
        path_str(&ws.path("win")),
    ])
    .stdout)
        .to_string();
    assert!(stdout.contains("Benign: 200"));
    assert!(stdout.contains("DoS: 100"));
}

#[test]
fn schema_flag_loads_foreign_column_layouts() {
    let ws = Workspace::new();
    let schema = ws.path("schema.conf");
    std::fs::write(
        &schema,
        "\
timestamp = ts
src_ip = saddr
src_port = sport
dst_ip = daddr
dst_port = dport
protocol = proto
duration = dur_ms
src_packets = spkts
dst_packets = dpkts
src_bytes = sbytes
dst_bytes = dbytes
label = attack
duration_unit = ms
classes = Benign,DoS
label.dos-slow = DoS
label.ok = Benign
",
    )
    .unwrap();
    let input = ws.path("foreign.csv");
    std::fs::write(
        &input,
        "ts,saddr,sport,daddr,dport,proto,dur_ms,spkts,dpkts,sbytes,dbytes,attack\n\
         1.0,h1,1024,h2,80,6,1500,2,2,100,100,ok\n\
         2.0,h1,1025,h2,80,6,500,2,2,100,100,dos-slow\n",
    )
    .unwrap();
    let out_dir = ws.path("win");
    let out = run(&[
        "window",
        "--input",
        path_str(&input),
        "--schema",
        path_str(&schema),
        "--out",
        path_str(&out_dir),
    ]);
    assert_ok(&out);
    let windowed = std::fs::read_to_string(out_dir.join("windowed.csv")).unwrap();
    // 1500 ms harmonized to 1.5 s, labels merged
    assert!(windowed.contains("1.5"));
    assert!(windowed.contains("DoS"));
    assert!(windowed.contains("Benign"));
}
