//! Position-only GRU baseline.
//!
//! Two stacked GRU layers read the normalised position sequence; a linear
//! classifier on the last hidden state of the top layer produces one logit
//! per codebook beam. All parameters live in one flat `Vec<f64>` described by
//! a [`Layout`], which keeps the optimiser and checkpointing trivial.

mod adam;
mod checkpoint;
mod gru;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use gru::{gru_forward, loss_and_gradients, loss_and_gradients_with, ForwardOutput};
pub use train::{
    evaluate_examples, predict_topk, rank_logits, train, train_with_observer, EpochRecord,
    Evaluation, TrainLog, TrainingExample,
};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub seq_len: usize,
    pub hidden_dim: usize,
    pub num_gru_layers: usize,
    pub num_classes: usize,
    pub learning_rate: f64,
    pub adam_betas: [f64; 2],
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 2,
            seq_len: 2,
            hidden_dim: 64,
            num_gru_layers: 2,
            num_classes: 64,
            learning_rate: 1e-3,
            adam_betas: [0.9, 0.999],
            adam_eps: 1e-8,
            batch_size: 32,
            epochs: 100,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("seq_len", self.seq_len),
            ("hidden_dim", self.hidden_dim),
            ("num_gru_layers", self.num_gru_layers),
            ("num_classes", self.num_classes),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.learning_rate > 0.0 && self.adam_eps > 0.0) {
            return Err(Error::Config("learning_rate and adam_eps must be positive".into()));
        }
        if !self.adam_betas.iter().all(|b| (0.0..1.0).contains(b)) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_betas[0],
            beta2: self.adam_betas[1],
            eps: self.adam_eps,
        }
    }
}

/// Name, shape and position of one weight tensor in the flat buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of the three gates of one GRU layer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GateOffsets {
    pub w: usize,
    pub u: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerOffsets {
    pub input_dim: usize,
    pub update: GateOffsets,
    pub reset: GateOffsets,
    pub candidate: GateOffsets,
}

/// Row-major tensor layout derived from a [`ModelConfig`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    tensors: Vec<TensorSpec>,
    total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize| {
            tensors.push(TensorSpec {
                name,
                rows,
                cols,
                offset,
            });
            offset += rows * cols;
        };
        let h = cfg.hidden_dim;
        for layer in 0..cfg.num_gru_layers {
            let d_in = if layer == 0 { cfg.input_dim } else { h };
            for gate in ["z", "r", "h"] {
                push(format!("gru{layer}.w_{gate}"), h, d_in);
                push(format!("gru{layer}.u_{gate}"), h, h);
                push(format!("gru{layer}.b_{gate}"), h, 1);
            }
        }
        push("fc.w".into(), cfg.num_classes, h);
        push("fc.b".into(), cfg.num_classes, 1);
        Self {
            tensors,
            total: offset,
        }
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub(crate) fn layer(&self, layer: usize) -> LayerOffsets {
        let base = layer * 9;
        let gate = |g: usize| GateOffsets {
            w: self.tensors[base + 3 * g].offset,
            u: self.tensors[base + 3 * g + 1].offset,
            b: self.tensors[base + 3 * g + 2].offset,
        };
        LayerOffsets {
            input_dim: self.tensors[base].cols,
            update: gate(0),
            reset: gate(1),
            candidate: gate(2),
        }
    }

    pub(crate) fn classifier(&self) -> (usize, usize) {
        let n = self.tensors.len();
        (self.tensors[n - 2].offset, self.tensors[n - 1].offset)
    }
}

/// Model weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    layout: Layout,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let values = vec![0.0; layout.total_len()];
        Ok(Self {
            config: *config,
            layout,
            values,
        })
    }

    /// Every weight uniform in `±1/√hidden_dim`.
    pub fn init(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let bound = 1.0 / (config.hidden_dim as f64).sqrt();
        for v in &mut params.values {
            *v = rng.random_range(-bound..bound);
        }
        Ok(params)
    }

    pub fn from_values(config: &ModelConfig, values: Vec<f64>) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        if values.len() != params.values.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                params.values.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite parameter".into()));
        }
        params.values = values;
        Ok(params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|t| &self.values[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.get(name)?.range();
        Some(&mut self.values[range])
    }
}
