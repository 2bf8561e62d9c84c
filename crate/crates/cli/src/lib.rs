//! Command-line driver: `generate` → `train` → `predict` → `score`, plus
//! `correlate` over the periodic checkpoints of a training run.

pub mod commands;
pub mod config;
pub mod error;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::commands::MANIFEST_FILE;
use crate::config::{ExperimentConfig, Overrides};
pub use crate::error::{exit, CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "beampred", version, about = "Position-aided mmWave beam prediction experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment configuration (TOML). Defaults to the dataset manifest,
    /// or the built-in experiment for `generate`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of ranked beams (prediction and metrics).
    #[arg(long)]
    pub topk: Option<usize>,
    /// DBA distance tolerance in beams.
    #[arg(long)]
    pub delta: Option<u32>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the scenarios and write train/test/label files and a manifest.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Output directory (default: paths.dataset_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the power-vs-beam profile of one sample to this CSV.
        #[arg(long)]
        beam_profile: Option<PathBuf>,
    },
    /// Fit the normaliser, train the GRU baseline and write checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Run directory (default: paths.run_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank beams for every test sample.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Prediction CSV to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against the hidden labels.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Report directory (default: paths.report_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Correlate DBA and top-k accuracy with the power ratio across checkpoints.
    Correlate {
        #[command(flatten)]
        common: Common,
        /// Directory of `*.ckpt` files.
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Report directory (default: paths.report_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            top_k: self.topk,
            delta: self.delta,
        }
    }

    /// Explicit `--config`, else `<dataset>/manifest.toml` when a dataset is
    /// given, else the built-in default.
    fn resolve(&self, dataset: Option<&Path>) -> Result<ExperimentConfig> {
        let base = match (&self.config, dataset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(dir)) => ExperimentConfig::load(&dir.join(MANIFEST_FILE))?,
            (None, None) => ExperimentConfig::default(),
        };
        base.apply(&self.overrides())
    }

    /// For commands that read a dataset: the directory given, or the one
    /// named in `--config`, or the default.
    fn dataset_config(&self, dataset: &Option<PathBuf>) -> Result<(ExperimentConfig, PathBuf)> {
        match dataset {
            Some(dir) => Ok((self.resolve(Some(dir))?, dir.clone())),
            None => {
                let file_cfg = self.resolve(None)?;
                let dir = file_cfg.paths.dataset_dir.clone();
                let cfg = if self.config.is_some() { file_cfg } else { self.resolve(Some(&dir))? };
                Ok((cfg, dir))
            }
        }
    }
}

/// Runs one command and returns the text to print on success.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Generate {
            common,
            out,
            beam_profile,
        } => {
            let cfg = common.resolve(None)?;
            let out = out.unwrap_or_else(|| cfg.paths.dataset_dir.clone());
            let s = commands::generate(&cfg, &out, beam_profile.as_deref())?;
            Ok(format!(
                "wrote {}: {} training samples, {} test samples ({} seen, {} unseen)",
                out.display(),
                s.train_samples,
                s.test_seen + s.test_unseen,
                s.test_seen,
                s.test_unseen
            ))
        }
        Command::Train { common, dataset, out } => {
            let (cfg, dataset) = common.dataset_config(&dataset)?;
            let out = out.unwrap_or_else(|| cfg.paths.run_dir.clone());
            let s = commands::train(&cfg, &dataset, &out)?;
            Ok(format!(
                "trained on {} samples ({} validation); selected epoch {} with validation DBA {:.4}; {} periodic checkpoints in {}",
                s.train_samples,
                s.validation_samples,
                s.best_epoch,
                s.best_val_dba,
                s.checkpoints,
                out.display()
            ))
        }
        Command::Predict {
            common,
            checkpoint,
            dataset,
            out,
        } => {
            let (cfg, dataset) = common.dataset_config(&dataset)?;
            let n = commands::predict(&cfg, &checkpoint, &dataset, cfg.metrics.top_k, &out)?;
            Ok(format!("wrote {n} predictions to {}", out.display()))
        }
        Command::Score {
            common,
            predictions,
            dataset,
            out,
        } => {
            let (cfg, dataset) = common.dataset_config(&dataset)?;
            let out = out.unwrap_or_else(|| cfg.paths.report_dir.clone());
            Ok(commands::score(&cfg, &predictions, &dataset, &out)?.table)
        }
        Command::Correlate {
            common,
            checkpoints,
            dataset,
            out,
        } => {
            let (cfg, dataset) = common.dataset_config(&dataset)?;
            let out = out.unwrap_or_else(|| cfg.paths.report_dir.clone());
            let s = commands::correlate(&cfg, &checkpoints, &dataset, &out)?;
            let mut text = format!(
                "{} checkpoints\ncorr(DBA, power ratio) = {:.4}\n",
                s.points.len(),
                s.table.dba_vs_power.value
            );
            for (k, c) in s.table.top_k_vs_power.iter().enumerate() {
                text.push_str(&format!("corr(top-{} accuracy, power ratio) = {:.4}\n", k + 1, c.value));
            }
            Ok(text)
        }
    }
}
