#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use beampred_cli::config::{ExperimentConfig, Overrides};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_beampred"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// A few trajectories per scenario and a tiny model: the full pipeline runs
/// in seconds.
pub fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    for sc in cfg.scenarios.iter_mut().chain(cfg.unseen_scenarios.iter_mut()) {
        sc.num_trajectories = 2;
    }
    cfg.model.hidden_dim = 8;
    cfg.model.epochs = 3;
    cfg.challenge.test_size = 40;
    cfg.challenge.checkpoint_every = 1;
    cfg.apply(&Overrides::default()).expect("valid configuration")
}

pub fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, cfg.to_toml()).expect("write config");
    path
}

pub struct Pipeline {
    pub root: PathBuf,
    pub config: PathBuf,
    pub data: PathBuf,
    pub run: PathBuf,
    pub predictions: PathBuf,
    pub report: PathBuf,
}

/// generate → train → predict → score with the binary, under `root`.
pub fn run_pipeline(root: &Path, cfg: &ExperimentConfig) -> Pipeline {
    let p = Pipeline {
        root: root.to_path_buf(),
        config: write_config(root, cfg),
        data: root.join("data"),
        run: root.join("run"),
        predictions: root.join("predictions.csv"),
        report: root.join("report"),
    };
    let model = p.run.join("model.ckpt");
    let steps: [Vec<&str>; 4] = [
        vec!["generate", "--config", s(&p.config), "--out", s(&p.data)],
        vec!["train", "--dataset", s(&p.data), "--out", s(&p.run)],
        vec![
            "predict",
            "--dataset",
            s(&p.data),
            "--checkpoint",
            s(&model),
            "--out",
            s(&p.predictions),
        ],
        vec!["score", "--dataset", s(&p.data), "--predictions", s(&p.predictions), "--out", s(&p.report)],
    ];
    for args in &steps {
        let out = run(args);
        assert_eq!(code(&out), 0, "{args:?} failed: {}", stderr(&out));
    }
    p
}

/// `key = value` lines into a map.
pub fn read_kv(path: &Path) -> std::collections::BTreeMap<String, String> {
    std::fs::read_to_string(path)
        .expect("kv file")
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}
