//! Ranked beam-prediction metrics.
//!
//! * top-k accuracy: hit if the true beam is among the first `k` predictions.
//! * DBA score: `Y_k = 1 - (1/N) Σ_n min_{k'≤k} min(|ŷ_{n,k'} - y_n| / Δ, 1)`
//!   averaged over `k = 1..=K`. Distances are plain index differences.
//! * power ratio: `(1/N) Σ_n (P̂_n - P_v) / (P_n - P_v)` where `P̂_n` is the
//!   best receive power among the `k` predicted beams, `P_n` the power of the
//!   true beam and `P_v` the scenario noise floor.
//!
//! Per-sample terms may be computed in parallel; they are always reduced in
//! index order with [`pairwise_sum`], so results do not depend on the
//! execution strategy.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::beamsim::PowerVector;
use crate::error::{Error, Result};
use crate::exec::{pairwise_sum, Exec};

/// Ranked, duplicate-free beam predictions for one sample (best first).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionSet(Vec<usize>);

impl PredictionSet {
    pub fn new(ranked_beams: Vec<usize>, num_beams: usize) -> Result<Self> {
        if ranked_beams.is_empty() {
            return Err(Error::Contract("prediction set is empty".into()));
        }
        let mut seen = vec![false; num_beams];
        for &b in &ranked_beams {
            if b >= num_beams {
                return Err(Error::Contract(format!(
                    "predicted beam {b} outside codebook of {num_beams}"
                )));
            }
            if std::mem::replace(&mut seen[b], true) {
                return Err(Error::Contract(format!("beam {b} predicted twice")));
            }
        }
        Ok(Self(ranked_beams))
    }

    pub fn beams(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub top_k: usize,
    pub delta: u32,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { top_k: 3, delta: 5 }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if self.delta == 0 {
            return Err(Error::Config("delta must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_batch(predictions: &[PredictionSet], labels: &[usize], k: usize) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Contract("cannot score an empty batch".into()));
    }
    if k == 0 {
        return Err(Error::Contract("k must be at least 1".into()));
    }
    if let Some((n, p)) = predictions.iter().enumerate().find(|(_, p)| p.len() < k) {
        return Err(Error::Contract(format!(
            "sample {n} carries {} predictions, k = {k}",
            p.len()
        )));
    }
    Ok(())
}

/// DBA score and its per-k components `Y_1..Y_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct DbaScore {
    pub score: f64,
    pub per_k: Vec<f64>,
}

pub fn dba_score(predictions: &[PredictionSet], labels: &[usize], cfg: &MetricConfig) -> Result<DbaScore> {
    dba_score_with(Exec::default(), predictions, labels, cfg)
}

pub fn dba_score_with(
    exec: Exec,
    predictions: &[PredictionSet],
    labels: &[usize],
    cfg: &MetricConfig,
) -> Result<DbaScore> {
    cfg.validate()?;
    check_batch(predictions, labels, cfg.top_k)?;
    let delta = f64::from(cfg.delta);
    let k_max = cfg.top_k;
    // terms[n][k-1] = 1 - min over the first k predictions of the saturated
    // distance; summing closeness rather than distance keeps Δ = 1 exact
    let terms = exec.map_range(labels.len(), |n| {
        let y = labels[n];
        let mut best = f64::INFINITY;
        predictions[n].beams()[..k_max]
            .iter()
            .map(|&b| {
                let d = (b.abs_diff(y) as f64 / delta).min(1.0);
                best = best.min(d);
                1.0 - best
            })
            .collect::<Vec<f64>>()
    });
    let n = labels.len() as f64;
    let mut column = vec![0.0; terms.len()];
    let per_k: Vec<f64> = (0..k_max)
        .map(|k| {
            for (c, t) in column.iter_mut().zip(&terms) {
                *c = t[k];
            }
            pairwise_sum(&column) / n
        })
        .collect();
    let score = pairwise_sum(&per_k) / k_max as f64;
    Ok(DbaScore { score, per_k })
}

/// Fraction of samples whose label is among the first `k` predictions.
pub fn top_k_accuracy(predictions: &[PredictionSet], labels: &[usize], k: usize) -> Result<f64> {
    check_batch(predictions, labels, k)?;
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, y)| p.beams()[..k].contains(y))
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// How the per-scenario noise floor `P_v` is obtained.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum NoiseFloor {
    /// Minimum power entry over every power vector of the scenario present in
    /// the evaluated set.
    #[default]
    ScenarioMinimum,
    /// Externally supplied floors, e.g. computed over a larger pool.
    Explicit(BTreeMap<u32, f64>),
}

/// Minimum observed power per scenario.
pub fn scenario_noise_floors(powers: &[PowerVector], scenario_ids: &[u32]) -> BTreeMap<u32, f64> {
    let mut floors = BTreeMap::new();
    for (p, &s) in powers.iter().zip(scenario_ids) {
        let min = p.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
        floors
            .entry(s)
            .and_modify(|f: &mut f64| *f = f.min(min))
            .or_insert(min);
    }
    floors
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerRatio {
    pub value: f64,
    /// Samples that entered the average.
    pub included: usize,
    /// Samples whose ground-truth power sits on the noise floor.
    pub excluded: usize,
}

pub fn power_ratio(
    predictions: &[PredictionSet],
    labels: &[usize],
    powers: &[PowerVector],
    scenario_ids: &[u32],
    k: usize,
    floor: &NoiseFloor,
) -> Result<PowerRatio> {
    power_ratio_with(Exec::default(), predictions, labels, powers, scenario_ids, k, floor)
}

pub fn power_ratio_with(
    exec: Exec,
    predictions: &[PredictionSet],
    labels: &[usize],
    powers: &[PowerVector],
    scenario_ids: &[u32],
    k: usize,
    floor: &NoiseFloor,
) -> Result<PowerRatio> {
    check_batch(predictions, labels, k)?;
    if powers.len() != labels.len() || scenario_ids.len() != labels.len() {
        return Err(Error::Contract(
            "power vectors and scenario ids must accompany every sample".into(),
        ));
    }
    let floors = match floor {
        NoiseFloor::ScenarioMinimum => scenario_noise_floors(powers, scenario_ids),
        NoiseFloor::Explicit(map) => map.clone(),
    };
    for (n, (p, &y)) in powers.iter().zip(labels).enumerate() {
        if y >= p.len() {
            return Err(Error::Contract(format!(
                "sample {n}: label {y} outside power vector of length {}",
                p.len()
            )));
        }
        if let Some(&b) = predictions[n].beams()[..k].iter().find(|&&b| b >= p.len()) {
            return Err(Error::Contract(format!(
                "sample {n}: predicted beam {b} outside power vector"
            )));
        }
    }
    let terms = exec.map_range(labels.len(), |n| -> Result<Option<f64>> {
        let p = powers[n].as_slice();
        let pv = *floors.get(&scenario_ids[n]).ok_or_else(|| {
            Error::Contract(format!("no noise floor for scenario {}", scenario_ids[n]))
        })?;
        let truth = p[labels[n]];
        let predicted = predictions[n].beams()[..k]
            .iter()
            .map(|&b| p[b])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom = truth - pv;
        Ok((denom != 0.0).then(|| (predicted - pv) / denom))
    });
    let mut included = Vec::with_capacity(terms.len());
    let mut excluded = 0;
    for t in terms {
        match t? {
            Some(v) => included.push(v),
            None => excluded += 1,
        }
    }
    if included.is_empty() {
        return Err(Error::InsufficientData(
            "every sample's ground-truth power equals its noise floor".into(),
        ));
    }
    Ok(PowerRatio {
        value: pairwise_sum(&included) / included.len() as f64,
        included: included.len(),
        excluded,
    })
}

/// Aggregate scores of one prediction set against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub num_samples: usize,
    /// Accuracy at `k = 1..=K`.
    pub top_k_accuracy: Vec<f64>,
    /// `Y_1..Y_K`.
    pub dba_per_k: Vec<f64>,
    pub dba_score: f64,
    /// Power ratio with the top-K predictions; absent without power vectors.
    pub power_ratio: Option<PowerRatio>,
    pub per_scenario: BTreeMap<u32, MetricReport>,
}

/// Scores a batch, overall and per scenario.
pub fn evaluate(
    predictions: &[PredictionSet],
    labels: &[usize],
    powers: Option<&[PowerVector]>,
    scenario_ids: &[u32],
    cfg: &MetricConfig,
) -> Result<MetricReport> {
    if scenario_ids.len() != labels.len() {
        return Err(Error::Contract("scenario id missing for some samples".into()));
    }
    let floors = powers.map(|p| scenario_noise_floors(p, scenario_ids));
    let mut report = evaluate_flat(predictions, labels, powers, scenario_ids, cfg, floors.as_ref())?;
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (n, &s) in scenario_ids.iter().enumerate() {
        groups.entry(s).or_default().push(n);
    }
    for (scenario, idx) in groups {
        let preds: Vec<_> = idx.iter().map(|&i| predictions[i].clone()).collect();
        let labs: Vec<_> = idx.iter().map(|&i| labels[i]).collect();
        let ids: Vec<_> = idx.iter().map(|&i| scenario_ids[i]).collect();
        let pows: Option<Vec<_>> = powers.map(|p| idx.iter().map(|&i| p[i].clone()).collect());
        let sub = evaluate_flat(&preds, &labs, pows.as_deref(), &ids, cfg, floors.as_ref())?;
        report.per_scenario.insert(scenario, sub);
    }
    Ok(report)
}

fn evaluate_flat(
    predictions: &[PredictionSet],
    labels: &[usize],
    powers: Option<&[PowerVector]>,
    scenario_ids: &[u32],
    cfg: &MetricConfig,
    floors: Option<&BTreeMap<u32, f64>>,
) -> Result<MetricReport> {
    let dba = dba_score(predictions, labels, cfg)?;
    let top_k_accuracy = (1..=cfg.top_k)
        .map(|k| top_k_accuracy(predictions, labels, k))
        .collect::<Result<Vec<_>>>()?;
    let power_ratio = match (powers, floors) {
        (Some(p), Some(f)) => Some(power_ratio(
            predictions,
            labels,
            p,
            scenario_ids,
            cfg.top_k,
            &NoiseFloor::Explicit(f.clone()),
        )?),
        _ => None,
    };
    Ok(MetricReport {
        num_samples: labels.len(),
        top_k_accuracy,
        dba_per_k: dba.per_k,
        dba_score: dba.score,
        power_ratio,
        per_scenario: BTreeMap::new(),
    })
}

impl MetricReport {
    /// Flat `key = value` listing.
    pub fn to_kv(&self, prefix: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{prefix}num_samples = {}", self.num_samples);
        for (k, a) in self.top_k_accuracy.iter().enumerate() {
            let _ = writeln!(out, "{prefix}top{}_accuracy = {a:.6}", k + 1);
        }
        for (k, y) in self.dba_per_k.iter().enumerate() {
            let _ = writeln!(out, "{prefix}dba_k{} = {y:.6}", k + 1);
        }
        let _ = writeln!(out, "{prefix}dba_score = {:.6}", self.dba_score);
        if let Some(pr) = &self.power_ratio {
            let _ = writeln!(out, "{prefix}power_ratio = {:.6}", pr.value);
            let _ = writeln!(out, "{prefix}power_ratio_excluded = {}", pr.excluded);
        }
        for (s, sub) in &self.per_scenario {
            out.push_str(&sub.to_kv(&format!("{prefix}scenario{s}.")));
        }
        out
    }
}

/// Accuracy and DBA rows in the `dataset,metric,top-1,...` layout, one pair
/// of rows per named report.
pub fn table_csv(rows: &[(&str, &MetricReport)]) -> String {
    let k = rows.first().map_or(0, |(_, r)| r.top_k_accuracy.len());
    let mut out = String::from("dataset,metric");
    for i in 1..=k {
        let _ = write!(out, ",top-{i}");
    }
    out.push_str(",power_ratio\n");
    for (name, report) in rows {
        let pr = report
            .power_ratio
            .map(|p| format!("{:.4}", p.value))
            .unwrap_or_default();
        for (metric, values) in [("accuracy", &report.top_k_accuracy), ("dba", &report.dba_per_k)] {
            let _ = write!(out, "{name},{metric}");
            for v in values.iter() {
                let _ = write!(out, ",{v:.4}");
            }
            let _ = writeln!(out, ",{pr}");
        }
    }
    out
}

/// Human-readable table: an accuracy block then a DBA block, one row per
/// dataset.
pub fn format_table(rows: &[(&str, &MetricReport)]) -> String {
    let k = rows.first().map_or(0, |(_, r)| r.top_k_accuracy.len());
    let mut out = String::new();
    let header = |out: &mut String, title: &str| {
        let _ = writeln!(out, "{title}");
        let _ = write!(out, "{:<10}", "Dataset");
        for i in 1..=k {
            let _ = write!(out, " | {:>8}", format!("top-{i}"));
        }
        out.push('\n');
    };
    header(&mut out, "Beam Prediction Accuracy");
    for (name, r) in rows {
        let _ = write!(out, "{name:<10}");
        for v in &r.top_k_accuracy {
            let _ = write!(out, " | {v:>8.4}");
        }
        out.push('\n');
    }
    header(&mut out, "DBA-Score");
    for (name, r) in rows {
        let _ = write!(out, "{name:<10}");
        for v in &r.dba_per_k {
            let _ = write!(out, " | {v:>8.4}");
        }
        out.push('\n');
    }
    out
}

/// Pearson correlation, flagged when a series has zero variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub value: f64,
    pub zero_variance: bool,
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Correlation {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Correlation {
            value: f64::NAN,
            zero_variance: true,
        };
    }
    Correlation {
        value: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
        zero_variance: false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTable {
    pub dba_vs_power: Correlation,
    /// Correlation of top-k accuracy with the power ratio, `k = 1..=K`.
    pub top_k_vs_power: Vec<Correlation>,
}

/// Correlation of the ranking metrics with the power ratio across reports
/// (typically checkpoints of increasing quality).
pub fn metric_correlation(reports: &[MetricReport]) -> Result<CorrelationTable> {
    if reports.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "correlation needs at least 3 reports, got {}",
            reports.len()
        )));
    }
    let power = reports
        .iter()
        .map(|r| r.power_ratio.map(|p| p.value))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Contract("every report needs a power ratio".into()))?;
    let dba: Vec<f64> = reports.iter().map(|r| r.dba_score).collect();
    let k = reports.iter().map(|r| r.top_k_accuracy.len()).min().unwrap_or(0);
    let top_k_vs_power = (0..k)
        .map(|i| {
            let acc: Vec<f64> = reports.iter().map(|r| r.top_k_accuracy[i]).collect();
            pearson(&acc, &power)
        })
        .collect();
    Ok(CorrelationTable {
        dba_vs_power: pearson(&dba, &power),
        top_k_vs_power,
    })
}
