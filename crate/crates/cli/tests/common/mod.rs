#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn sinn(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sinn"));
    cmd.args(args).env_remove("SINN_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("sinn binary runs")
}

pub fn sinn_ok(args: &[&str], env: &[(&str, &str)]) -> Output {
    let out = sinn(args, env);
    assert!(
        out.status.success(),
        "sinn {args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Settings for the overfit pipeline on the separable fixture.
pub const OVERFIT_CONFIG: &str = "\
seed = 3
vocab_size = 512
steps = 500
epochs = 100000
batch_size = 8
chunks = 5
epochs_per_chunk = 5
rounds = 30
phase2_epochs = 50
";

/// A short schedule for tests that only check wiring or determinism.
pub const QUICK_CONFIG: &str = "\
seed = 5
vocab_size = 300
steps = 20
epochs = 100000
dim = 16
batch_size = 10
chunks = 4
epochs_per_chunk = 1
rounds = 2
phase2_epochs = 2
";

pub struct Pipeline {
    pub dir: PathBuf,
    pub units: PathBuf,
    pub vocab: PathBuf,
    pub encoder: PathBuf,
    pub model: PathBuf,
    pub report: PathBuf,
    pub report_csv: PathBuf,
    pub predictions: PathBuf,
}

/// extract -> vocab -> pretrain -> train -> eval -> predict, all writing
/// into `dir`. `data` is both the training and evaluation set; predictions
/// are made for `predict_on`.
pub fn run_pipeline(dir: &Path, config: &str, data: &Path, predict_on: &Path, env: &[(&str, &str)]) -> Pipeline {
    std::fs::create_dir_all(dir).unwrap();
    let conf = dir.join("run.conf");
    std::fs::write(&conf, config).unwrap();
    let p = Pipeline {
        dir: dir.to_path_buf(),
        units: dir.join("units.jsonl"),
        vocab: dir.join("vocab.txt"),
        encoder: dir.join("encoder.sinn"),
        model: dir.join("model.sinn"),
        report: dir.join("report.json"),
        report_csv: dir.join("report.csv"),
        predictions: dir.join("predictions.jsonl"),
    };
    let s = |x: &Path| x.to_str().unwrap().to_string();
    let c = s(&conf);
    let steps: Vec<Vec<String>> = vec![
        vec!["extract".into(), "--input".into(), s(data), "--output".into(), s(&p.units)],
        vec!["vocab".into(), "--corpus".into(), s(&p.units), "--output".into(), s(&p.vocab)],
        vec![
            "pretrain".into(),
            "--corpus".into(),
            s(&p.units),
            "--vocab".into(),
            s(&p.vocab),
            "--output".into(),
            s(&p.encoder),
        ],
        vec![
            "train".into(),
            "--data".into(),
            s(data),
            "--vocab".into(),
            s(&p.vocab),
            "--encoder".into(),
            s(&p.encoder),
            "--output".into(),
            s(&p.model),
            "--trace".into(),
            s(&dir.join("loss.csv")),
        ],
        vec![
            "eval".into(),
            "--data".into(),
            s(data),
            "--vocab".into(),
            s(&p.vocab),
            "--model".into(),
            s(&p.model),
            "--output".into(),
            s(&p.report),
        ],
        vec![
            "predict".into(),
            "--data".into(),
            s(predict_on),
            "--vocab".into(),
            s(&p.vocab),
            "--model".into(),
            s(&p.model),
            "--output".into(),
            s(&p.predictions),
        ],
    ];
    for step in steps {
        let mut args = vec!["--config", c.as_str()];
        args.extend(step.iter().map(String::as_str));
        sinn_ok(&args, env);
    }
    p
}
