//! Versioned text checkpoint.
//!
//! ```text
//! beampred-checkpoint v1
//! epoch = 12
//! [config]
//! hidden_dim = 64
//! ...
//! [normalization]
//! min_x = -85.1
//! ...
//! [tensor gru0.w_z 64 2]
//! <one row per line, space separated>
//! ...
//! [end]
//! ```
//!
//! Floats are written in shortest round-trip form, so save/load is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use super::{Layout, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::geodesy::PositionNormalizer;

const MAGIC: &str = "beampred-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub normalizer: Option<PositionNormalizer>,
    pub epoch: usize,
}

fn parse_err(row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        row,
        column: column.into(),
        message: message.into(),
    }
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let cfg = self.params.config();
        let mut out = format!("{MAGIC}\nepoch = {}\n[config]\n", self.epoch);
        let _ = writeln!(out, "input_dim = {}", cfg.input_dim);
        let _ = writeln!(out, "seq_len = {}", cfg.seq_len);
        let _ = writeln!(out, "hidden_dim = {}", cfg.hidden_dim);
        let _ = writeln!(out, "num_gru_layers = {}", cfg.num_gru_layers);
        let _ = writeln!(out, "num_classes = {}", cfg.num_classes);
        let _ = writeln!(out, "learning_rate = {:?}", cfg.learning_rate);
        let _ = writeln!(out, "adam_beta1 = {:?}", cfg.adam_betas[0]);
        let _ = writeln!(out, "adam_beta2 = {:?}", cfg.adam_betas[1]);
        let _ = writeln!(out, "adam_eps = {:?}", cfg.adam_eps);
        let _ = writeln!(out, "batch_size = {}", cfg.batch_size);
        let _ = writeln!(out, "epochs = {}", cfg.epochs);
        let _ = writeln!(out, "seed = {}", cfg.seed);
        if let Some(norm) = &self.normalizer {
            out.push_str("[normalization]\n");
            for line in norm.to_kv().lines().filter(|l| !l.starts_with('#')) {
                out.push_str(line);
                out.push('\n');
            }
        }
        for t in self.params.layout().tensors() {
            let _ = writeln!(out, "[tensor {} {} {}]", t.name, t.rows, t.cols);
            for row in self.params.values()[t.range()].chunks(t.cols) {
                let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out.push_str("[end]\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().peekable();
        match lines.next() {
            Some((_, MAGIC)) => {}
            Some((_, other)) => {
                return Err(parse_err(1, "header", format!("unsupported checkpoint header `{other}`")))
            }
            None => return Err(parse_err(1, "header", "empty checkpoint")),
        }
        let mut epoch = 0;
        let mut config_kv: Vec<(usize, String, String)> = Vec::new();
        let mut norm_text = String::new();
        let mut tensors: Vec<(usize, String, usize, usize, Vec<f64>)> = Vec::new();
        let mut section = "";
        let mut ended = false;
        for (i, raw) in lines {
            let row = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let mut parts = header.split_whitespace();
                match parts.next() {
                    Some("config") => section = "config",
                    Some("normalization") => section = "normalization",
                    Some("end") => {
                        ended = true;
                        break;
                    }
                    Some("tensor") => {
                        let name = parts.next().ok_or_else(|| parse_err(row, "tensor", "missing name"))?;
                        let dims: Vec<usize> = parts
                            .map(|d| d.parse().map_err(|_| parse_err(row, name, "invalid dimension")))
                            .collect::<Result<_>>()?;
                        let [rows, cols] = dims[..] else {
                            return Err(parse_err(row, name, "expected `rows cols`"));
                        };
                        tensors.push((row, name.to_string(), rows, cols, Vec::with_capacity(rows * cols)));
                        section = "tensor";
                    }
                    _ => return Err(parse_err(row, "section", format!("unknown section `{header}`"))),
                }
                continue;
            }
            match section {
                "" => {
                    let (k, v) = line.split_once('=').ok_or_else(|| parse_err(row, "epoch", "expected key = value"))?;
                    if k.trim() != "epoch" {
                        return Err(parse_err(row, k.trim(), "unexpected key before [config]"));
                    }
                    epoch = v.trim().parse().map_err(|_| parse_err(row, "epoch", "invalid epoch"))?;
                }
                "config" => {
                    let (k, v) = line.split_once('=').ok_or_else(|| parse_err(row, "config", "expected key = value"))?;
                    config_kv.push((row, k.trim().to_string(), v.trim().to_string()));
                }
                "normalization" => {
                    norm_text.push_str(line);
                    norm_text.push('\n');
                }
                _ => {
                    let (_, name, _, _, values) = tensors.last_mut().expect("inside a tensor section");
                    for tok in line.split_whitespace() {
                        values.push(tok.parse().map_err(|_| parse_err(row, name, format!("not a number: `{tok}`")))?);
                    }
                }
            }
        }
        if !ended {
            return Err(parse_err(0, "end", "truncated checkpoint (no [end] marker)"));
        }

        let mut cfg = ModelConfig::default();
        for (row, key, value) in &config_kv {
            let bad = || parse_err(*row, key, format!("invalid value `{value}`"));
            let int = || value.parse::<usize>().map_err(|_| bad());
            let float = || value.parse::<f64>().map_err(|_| bad());
            match key.as_str() {
                "input_dim" => cfg.input_dim = int()?,
                "seq_len" => cfg.seq_len = int()?,
                "hidden_dim" => cfg.hidden_dim = int()?,
                "num_gru_layers" => cfg.num_gru_layers = int()?,
                "num_classes" => cfg.num_classes = int()?,
                "learning_rate" => cfg.learning_rate = float()?,
                "adam_beta1" => cfg.adam_betas[0] = float()?,
                "adam_beta2" => cfg.adam_betas[1] = float()?,
                "adam_eps" => cfg.adam_eps = float()?,
                "batch_size" => cfg.batch_size = int()?,
                "epochs" => cfg.epochs = int()?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad())?,
                _ => return Err(parse_err(*row, key, "unknown config key")),
            }
        }
        cfg.validate()?;

        let layout = Layout::new(&cfg);
        if tensors.len() != layout.tensors().len() {
            return Err(Error::Shape(format!(
                "checkpoint holds {} tensors, configuration implies {}",
                tensors.len(),
                layout.tensors().len()
            )));
        }
        let mut values = vec![0.0; layout.total_len()];
        for ((row, name, rows, cols, data), spec) in tensors.into_iter().zip(layout.tensors()) {
            if name != spec.name || rows != spec.rows || cols != spec.cols {
                return Err(Error::Shape(format!(
                    "line {row}: tensor `{name}` [{rows}x{cols}] where `{}` [{}x{}] is expected",
                    spec.name, spec.rows, spec.cols
                )));
            }
            if data.len() != spec.len() {
                return Err(Error::Shape(format!(
                    "tensor `{name}` declares {} values but holds {}",
                    spec.len(),
                    data.len()
                )));
            }
            values[spec.range()].copy_from_slice(&data);
        }
        let normalizer = if norm_text.is_empty() {
            None
        } else {
            Some(PositionNormalizer::from_kv(&norm_text)?)
        };
        Ok(Self {
            params: ModelParams::from_values(&cfg, values)?,
            normalizer,
            epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
