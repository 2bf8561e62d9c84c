//! Experiment configuration: one TOML file drives every command. The
//! `generate` step writes the resolved configuration next to the data as
//! `manifest.toml`, and later steps read it back from there by default.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use beampred::beamsim::{ArrayConfig, Propagation};
use beampred::dataset::{derive_seed, ScenarioConfig, POSITION_LEN};
use beampred::geodesy::GeoPosition;
use beampred::metrics::MetricConfig;
use beampred::model::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

// Independent random streams derived from the master seed.
const STREAM_SCENARIOS: u64 = 1;
const STREAM_CHALLENGE: u64 = 2;
const STREAM_VALIDATION: u64 = 3;
const STREAM_MODEL: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset_dir: PathBuf,
    pub run_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset_dir: "data".into(),
            run_dir: "run".into(),
            report_dir: "report".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChallengeConfig {
    /// Test samples, half from the seen scenarios and half unseen.
    pub test_size: usize,
    /// Fraction of the training file held out for model selection.
    pub validation_fraction: f64,
    /// Write an intermediate checkpoint every this many epochs (0 = never).
    pub checkpoint_every: usize,
}

impl Default for ChallengeConfig {
    fn default() -> Self {
        Self {
            test_size: 400,
            validation_fraction: 0.1,
            checkpoint_every: 5,
        }
    }
}

/// A scenario as written in the config file: the road is given in metres
/// east/north of the basestation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub scenario_id: u32,
    /// `[latitude, longitude]` in degrees.
    pub basestation: [f64; 2],
    #[serde(default)]
    pub boresight_deg: f64,
    pub road_start: [f64; 2],
    pub road_end: [f64; 2],
    pub num_trajectories: usize,
    pub speed: f64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
    #[serde(default = "default_gps_noise")]
    pub gps_noise_std: f64,
    #[serde(default)]
    pub propagation: Propagation,
}

fn default_sample_rate() -> f64 {
    10.0
}

fn default_gps_noise() -> f64 {
    1.0
}

impl ScenarioSpec {
    fn local(id: u32, bs: [f64; 2], start: [f64; 2], end: [f64; 2]) -> Self {
        Self {
            scenario_id: id,
            basestation: bs,
            boresight_deg: 0.0,
            road_start: start,
            road_end: end,
            num_trajectories: 5,
            speed: 10.0,
            sample_rate: default_sample_rate(),
            gps_noise_std: default_gps_noise(),
            propagation: Propagation::default(),
        }
    }

    pub fn basestation_position(&self) -> Result<GeoPosition> {
        Ok(GeoPosition::new(self.basestation[0], self.basestation[1])?)
    }

    fn resolve(&self, master_seed: u64) -> Result<ScenarioConfig> {
        let bs = self.basestation_position()?;
        let seed = derive_seed(derive_seed(master_seed, STREAM_SCENARIOS), u64::from(self.scenario_id));
        let cfg = ScenarioConfig {
            sample_rate: self.sample_rate,
            gps_noise_std: self.gps_noise_std,
            propagation: self.propagation,
            ..ScenarioConfig::from_local(
                self.scenario_id,
                bs,
                self.boresight_deg,
                self.road_start,
                self.road_end,
                self.num_trajectories,
                self.speed,
                seed,
            )
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub paths: Paths,
    pub array: ArrayConfig,
    /// `model.seed` is ignored on input; it is derived from `seed`.
    pub model: ModelConfig,
    pub metrics: MetricConfig,
    pub challenge: ChallengeConfig,
    /// Scenarios that contribute training data and half of the test set.
    pub scenarios: Vec<ScenarioSpec>,
    /// Scenarios that only appear in the test set.
    pub unseen_scenarios: Vec<ScenarioSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let model = ModelConfig {
            learning_rate: 5e-3,
            epochs: 60,
            ..ModelConfig::default()
        };
        Self {
            seed: 2024,
            paths: Paths::default(),
            array: ArrayConfig::default(),
            model,
            metrics: MetricConfig::default(),
            challenge: ChallengeConfig::default(),
            scenarios: vec![
                ScenarioSpec::local(32, [33.4197, -111.9286], [-120.0, 225.0], [120.0, 225.0]),
                ScenarioSpec::local(33, [33.4203, -111.9301], [135.0, 270.0], [-135.0, 270.0]),
                ScenarioSpec::local(34, [33.4189, -111.9270], [-97.5, 180.0], [97.5, 180.0]),
            ],
            unseen_scenarios: vec![ScenarioSpec::local(
                31,
                [33.4211, -111.9322],
                [90.0, 150.0],
                [-60.0, 247.5],
            )],
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub top_k: Option<usize>,
    pub delta: Option<u32>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.model.seed = derive_seed(cfg.seed, STREAM_MODEL);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        let body = toml::to_string(self).expect("configuration is always representable in TOML");
        format!("# beampred experiment manifest (resolved configuration)\n{body}")
    }

    pub fn apply(mut self, overrides: &Overrides) -> Result<Self> {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(k) = overrides.top_k {
            self.metrics.top_k = k;
        }
        if let Some(d) = overrides.delta {
            self.metrics.delta = d;
        }
        self.model.seed = derive_seed(self.seed, STREAM_MODEL);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.array.validate()?;
        self.model.validate()?;
        self.metrics.validate()?;
        let p = &self.paths;
        if p.dataset_dir == p.run_dir || p.dataset_dir == p.report_dir || p.run_dir == p.report_dir {
            return Err(CliError::Config("dataset_dir, run_dir and report_dir must be distinct".into()));
        }
        if self.model.num_classes != self.array.num_beams {
            return Err(CliError::Config(format!(
                "model.num_classes ({}) must equal array.num_beams ({})",
                self.model.num_classes, self.array.num_beams
            )));
        }
        if self.model.input_dim != 2 || self.model.seq_len != POSITION_LEN {
            return Err(CliError::Config(format!(
                "the model consumes {POSITION_LEN} planar positions (input_dim = 2, seq_len = {POSITION_LEN})"
            )));
        }
        if self.metrics.top_k > self.array.num_beams {
            return Err(CliError::Config(format!(
                "metrics.top_k ({}) exceeds the codebook size",
                self.metrics.top_k
            )));
        }
        if self.scenarios.is_empty() {
            return Err(CliError::Config("at least one training scenario is required".into()));
        }
        let mut ids = BTreeSet::new();
        for s in self.scenarios.iter().chain(&self.unseen_scenarios) {
            if !ids.insert(s.scenario_id) {
                return Err(CliError::Config(format!("scenario id {} appears twice", s.scenario_id)));
            }
        }
        let v = self.challenge.validation_fraction;
        if !(v > 0.0 && v < 1.0) {
            return Err(CliError::Config("challenge.validation_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn seen_scenarios(&self) -> Result<Vec<ScenarioConfig>> {
        self.scenarios.iter().map(|s| s.resolve(self.seed)).collect()
    }

    pub fn unseen_scenario_configs(&self) -> Result<Vec<ScenarioConfig>> {
        self.unseen_scenarios.iter().map(|s| s.resolve(self.seed)).collect()
    }

    pub fn is_seen(&self, scenario_id: u32) -> bool {
        self.scenarios.iter().any(|s| s.scenario_id == scenario_id)
    }

    pub fn challenge_seed(&self) -> u64 {
        derive_seed(self.seed, STREAM_CHALLENGE)
    }

    pub fn validation_seed(&self) -> u64 {
        derive_seed(self.seed, STREAM_VALIDATION)
    }
}
