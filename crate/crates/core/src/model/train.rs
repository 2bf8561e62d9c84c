use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gru::{cross_entropy, gru_forward, loss_and_gradients_with};
use super::{adam_step, AdamState, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::exec::{pairwise_sum, Exec};
use crate::metrics::{dba_score, top_k_accuracy, DbaScore, MetricConfig, PredictionSet};

/// One model input (`seq_len × input_dim`, row-major) and its beam label.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub input: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_top1: f64,
    pub val_dba: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned (highest validation DBA).
    pub best_epoch: usize,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_top1,val_dba,selected\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{:?},{:?},{:?},{:?},{}",
                e.epoch,
                e.train_loss,
                e.val_loss,
                e.val_top1,
                e.val_dba,
                u8::from(e.epoch == self.best_epoch)
            );
        }
        out
    }
}

/// Indices of the `k` largest logits, largest first; ties go to the lower
/// index.
pub fn rank_logits(logits: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]));
    order.truncate(k);
    order
}

pub fn predict_topk(params: &ModelParams, input: &[f64], k: usize) -> Result<PredictionSet> {
    let q = params.config().num_classes;
    if k == 0 || k > q {
        return Err(Error::Contract(format!("k = {k} must lie in 1..={q}")));
    }
    let out = gru_forward(params, input)?;
    PredictionSet::new(rank_logits(&out.logits, k), q)
}

/// Model quality on a labelled set.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub predictions: Vec<PredictionSet>,
    pub top1: f64,
    pub dba: DbaScore,
}

pub fn evaluate_examples(
    exec: Exec,
    params: &ModelParams,
    examples: &[TrainingExample],
    metric: &MetricConfig,
) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::Config("cannot evaluate an empty set".into()));
    }
    let q = params.config().num_classes;
    let k = metric.top_k.min(q);
    let outputs = exec.map(examples, |ex| {
        gru_forward(params, &ex.input).map(|out| (cross_entropy(&out.logits, ex.label), rank_logits(&out.logits, k)))
    });
    let mut losses = Vec::with_capacity(examples.len());
    let mut predictions = Vec::with_capacity(examples.len());
    for out in outputs {
        let (loss, ranked) = out?;
        losses.push(loss);
        predictions.push(PredictionSet::new(ranked, q)?);
    }
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let cfg = MetricConfig { top_k: k, ..*metric };
    Ok(Evaluation {
        loss: pairwise_sum(&losses) / examples.len() as f64,
        top1: top_k_accuracy(&predictions, &labels, 1)?,
        dba: dba_score(&predictions, &labels, &cfg)?,
        predictions,
    })
}

pub fn train(
    train_set: &[TrainingExample],
    val_set: &[TrainingExample],
    cfg: &ModelConfig,
    metric: &MetricConfig,
) -> Result<(ModelParams, TrainLog)> {
    train_with_observer(train_set, val_set, cfg, metric, |_, _| Ok(()))
}

/// Seeded mini-batch Adam training. `observer` sees every epoch's record and
/// the parameters at the end of that epoch (for periodic checkpoints). The
/// returned parameters are those of the epoch with the highest validation
/// DBA, earliest on ties.
pub fn train_with_observer<F>(
    train_set: &[TrainingExample],
    val_set: &[TrainingExample],
    cfg: &ModelConfig,
    metric: &MetricConfig,
    mut observer: F,
) -> Result<(ModelParams, TrainLog)>
where
    F: FnMut(&EpochRecord, &ModelParams) -> Result<()>,
{
    cfg.validate()?;
    metric.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config(format!(
            "training needs non-empty splits (train {}, validation {})",
            train_set.len(),
            val_set.len()
        )));
    }
    let exec = Exec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(cfg, &mut rng)?;
    let mut state = AdamState::new(params.values().len());
    let adam = cfg.adam();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, ModelParams)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut weighted_losses = Vec::with_capacity(order.len().div_ceil(cfg.batch_size));
        for batch in order.chunks(cfg.batch_size) {
            let inputs: Vec<Vec<f64>> = batch.iter().map(|&i| train_set[i].input.clone()).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train_set[i].label).collect();
            let (loss, grad) = loss_and_gradients_with(exec, &params, &inputs, &labels)?;
            adam_step(params.values_mut(), &grad, &mut state, &adam);
            weighted_losses.push(loss * batch.len() as f64);
        }
        let eval = evaluate_examples(exec, &params, val_set, metric)?;
        let record = EpochRecord {
            epoch,
            train_loss: pairwise_sum(&weighted_losses) / train_set.len() as f64,
            val_loss: eval.loss,
            val_top1: eval.top1,
            val_dba: eval.dba.score,
        };
        if !(record.train_loss.is_finite() && record.val_loss.is_finite()) {
            return Err(Error::Numerical(format!(
                "epoch {epoch}: non-finite loss (train {}, validation {})",
                record.train_loss, record.val_loss
            )));
        }
        if best.as_ref().is_none_or(|(score, _)| record.val_dba > *score) {
            best = Some((record.val_dba, params.clone()));
            log.best_epoch = epoch;
        }
        observer(&record, &params)?;
        log.epochs.push(record);
    }
    let (_, best_params) = best.expect("at least one epoch");
    Ok((best_params, log))
}
