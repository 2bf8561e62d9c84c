//! The five pipeline steps. Each returns a human-readable summary; all file
//! output goes to paths that must not exist yet.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use beampred::beamsim::{near_peak_region, PowerVector};
use beampred::dataset::{
    build_challenge, format_sig9, generate_samples, read_hidden_labels, read_predictions, read_samples,
    split_dataset, write_hidden_labels, write_predictions, write_samples, ChallengeSample, SampleFileKind,
};
use beampred::exec::Exec;
use beampred::geodesy::{GeoPosition, PositionNormalizer};
use beampred::metrics::{
    evaluate, format_table, metric_correlation, table_csv, CorrelationTable, MetricReport, PredictionSet,
};
use beampred::model::{predict_topk, train_with_observer, Checkpoint, ModelParams, TrainingExample};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";
pub const LABELS_FILE: &str = "test_labels.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MODEL_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.csv";
pub const NORMALIZATION_FILE: &str = "normalization.txt";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const SCORE_CSV: &str = "score.csv";
pub const SCORE_TXT: &str = "score.txt";
pub const POINTS_CSV: &str = "correlation_points.csv";
pub const CORRELATION_TXT: &str = "correlation.txt";

fn ensure_fresh(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if p.exists() {
            return Err(CliError::Exists(p.to_path_buf()));
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Model input for one sample: the normalised positions, row-major.
pub fn encode_sample(normalizer: &PositionNormalizer, sample: &ChallengeSample) -> Result<Vec<f64>> {
    let mut input = Vec::with_capacity(2 * sample.positions.len());
    for p in &sample.positions {
        input.extend(normalizer.normalize(sample.scenario_id, p)?);
    }
    Ok(input)
}

fn basestations(cfg: &ExperimentConfig, seen_only: bool) -> Result<Vec<(u32, GeoPosition)>> {
    let specs = cfg.scenarios.iter().chain(if seen_only { &[][..] } else { &cfg.unseen_scenarios[..] });
    specs.map(|s| Ok((s.scenario_id, s.basestation_position()?))).collect()
}

pub struct GenerateSummary {
    pub train_samples: usize,
    pub test_seen: usize,
    pub test_unseen: usize,
}

/// Simulates every scenario, builds the seen/unseen challenge and writes
/// `train.csv`, `test.csv`, `test_labels.csv` and `manifest.toml` into
/// `out`. With `beam_profile`, also writes the power-vs-beam profile of the
/// first training sample.
pub fn generate(cfg: &ExperimentConfig, out: &Path, beam_profile: Option<&Path>) -> Result<GenerateSummary> {
    let files: Vec<PathBuf> = [TRAIN_FILE, TEST_FILE, LABELS_FILE, MANIFEST_FILE]
        .iter()
        .map(|f| out.join(f))
        .collect();
    let mut fresh: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
    fresh.extend(beam_profile);
    ensure_fresh(&fresh)?;
    if cfg.unseen_scenarios.is_empty() {
        return Err(CliError::Config("at least one unseen scenario is required".into()));
    }

    let exec = Exec::default();
    let seen = generate_samples(exec, &cfg.seen_scenarios()?, &cfg.array, 0)?;
    let unseen = generate_samples(exec, &cfg.unseen_scenario_configs()?, &cfg.array, seen.len() as u64)?;
    let challenge = build_challenge(&seen, &unseen, cfg.challenge.test_size, cfg.challenge_seed())?;

    create_dir(out)?;
    write_samples(&files[0], &challenge.train, SampleFileKind::Train)?;
    write_samples(&files[1], &challenge.test, SampleFileKind::Test)?;
    write_hidden_labels(&files[2], &challenge.hidden)?;
    write_text(&files[3], &cfg.to_toml())?;
    if let Some(path) = beam_profile {
        let powers = challenge.train[0].power_vector.as_ref().expect("training samples carry powers");
        write_text(path, &beam_profile_csv(powers)?)?;
    }
    let test_seen = challenge.test.iter().filter(|s| cfg.is_seen(s.scenario_id)).count();
    Ok(GenerateSummary {
        train_samples: challenge.train.len(),
        test_seen,
        test_unseen: challenge.test.len() - test_seen,
    })
}

/// `beam,power,relative_power,near_peak` with 1-based beams; `near_peak`
/// marks the contiguous run above half of the peak.
pub fn beam_profile_csv(powers: &PowerVector) -> Result<String> {
    let p = powers.as_slice();
    let (lo, hi) = near_peak_region(p, 0.5)?;
    let peak = p.iter().copied().fold(0.0, f64::max);
    let mut out = String::from("beam,power,relative_power,near_peak\n");
    for (q, &v) in p.iter().enumerate() {
        let rel = if peak > 0.0 { v / peak } else { 0.0 };
        let _ = writeln!(
            out,
            "{},{},{},{}",
            q + 1,
            format_sig9(v),
            format_sig9(rel),
            u8::from((lo..=hi).contains(&q))
        );
    }
    Ok(out)
}

pub struct TrainSummary {
    pub train_samples: usize,
    pub validation_samples: usize,
    pub best_epoch: usize,
    pub best_val_dba: f64,
    pub checkpoints: usize,
}

/// Fits the position normaliser on the training split, trains the GRU and
/// writes `model.ckpt`, `train_log.csv`, `normalization.txt` and the
/// periodic checkpoints under `out`.
pub fn train(cfg: &ExperimentConfig, dataset: &Path, out: &Path) -> Result<TrainSummary> {
    let model_path = out.join(MODEL_FILE);
    let log_path = out.join(LOG_FILE);
    let norm_path = out.join(NORMALIZATION_FILE);
    let ckpt_dir = out.join(CHECKPOINT_DIR);
    ensure_fresh(&[&model_path, &log_path, &norm_path, &ckpt_dir])?;

    let (kind, samples) = read_samples(&dataset.join(TRAIN_FILE))?;
    if kind != SampleFileKind::Train {
        return Err(CliError::Contract(format!("{} carries no labels", dataset.join(TRAIN_FILE).display())));
    }
    let v = cfg.challenge.validation_fraction;
    let split = split_dataset(&samples, [1.0 - v, v, 0.0], cfg.validation_seed())?;
    let by_id: BTreeMap<u64, &ChallengeSample> = samples.iter().map(|s| (s.sample_id, s)).collect();
    let pick = |ids: &[u64]| -> Vec<&ChallengeSample> { ids.iter().map(|id| by_id[id]).collect() };
    let (train_part, val_part) = (pick(&split.train), pick(&split.validation));

    let fixes: Vec<_> = train_part
        .iter()
        .flat_map(|s| s.positions.iter().map(|p| (s.scenario_id, *p)))
        .collect();
    let normalizer = PositionNormalizer::fit(&basestations(cfg, true)?, &fixes)?;
    let examples = |part: &[&ChallengeSample]| -> Result<Vec<TrainingExample>> {
        part.iter()
            .map(|s| {
                Ok(TrainingExample {
                    input: encode_sample(&normalizer, s)?,
                    label: s.label.ok_or_else(|| CliError::Contract("unlabelled training sample".into()))?,
                })
            })
            .collect()
    };
    let (train_set, val_set) = (examples(&train_part)?, examples(&val_part)?);

    create_dir(out)?;
    let every = cfg.challenge.checkpoint_every;
    if every > 0 {
        create_dir(&ckpt_dir)?;
    }
    let mut checkpoints = 0;
    let (params, log) = train_with_observer(&train_set, &val_set, &cfg.model, &cfg.metrics, |record, params| {
        if every > 0 && record.epoch % every == 0 {
            Checkpoint {
                params: params.clone(),
                normalizer: Some(normalizer.clone()),
                epoch: record.epoch,
            }
            .save(&ckpt_dir.join(format!("epoch_{:04}.ckpt", record.epoch)))?;
            checkpoints += 1;
        }
        Ok(())
    })?;
    Checkpoint {
        params,
        normalizer: Some(normalizer.clone()),
        epoch: log.best_epoch,
    }
    .save(&model_path)?;
    write_text(&log_path, &log.to_csv())?;
    normalizer.save(&norm_path)?;
    Ok(TrainSummary {
        train_samples: train_set.len(),
        validation_samples: val_set.len(),
        best_epoch: log.best_epoch,
        best_val_dba: log.epochs[log.best_epoch - 1].val_dba,
        checkpoints,
    })
}

/// A checkpoint made ready for a particular dataset: the normaliser knows
/// the basestation of every scenario in the configuration.
struct Predictor {
    params: ModelParams,
    normalizer: PositionNormalizer,
    epoch: usize,
}

impl Predictor {
    fn load(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Self> {
        let ck = Checkpoint::load(checkpoint)?;
        let mut normalizer = ck.normalizer.ok_or_else(|| {
            CliError::Contract(format!("{} holds no normalisation statistics", checkpoint.display()))
        })?;
        let q = ck.params.config().num_classes;
        if q != cfg.array.num_beams {
            return Err(CliError::Contract(format!(
                "checkpoint predicts {q} beams, the dataset codebook has {}",
                cfg.array.num_beams
            )));
        }
        for (id, bs) in basestations(cfg, false)? {
            normalizer.register_basestation(id, &bs)?;
        }
        Ok(Self {
            params: ck.params,
            normalizer,
            epoch: ck.epoch,
        })
    }

    fn predict(&self, samples: &[ChallengeSample], k: usize) -> Result<Vec<PredictionSet>> {
        Exec::default()
            .map(samples, |s| {
                let input = encode_sample(&self.normalizer, s)?;
                Ok(predict_topk(&self.params, &input, k)?)
            })
            .into_iter()
            .collect()
    }
}

fn read_test_samples(dataset: &Path) -> Result<Vec<ChallengeSample>> {
    Ok(read_samples(&dataset.join(TEST_FILE))?.1)
}

/// Ranks `k` beams for every test sample and writes
/// `sample_id,beam_1..beam_k` (1-based) to `out`.
pub fn predict(cfg: &ExperimentConfig, checkpoint: &Path, dataset: &Path, k: usize, out: &Path) -> Result<usize> {
    ensure_fresh(&[out])?;
    let predictor = Predictor::load(cfg, checkpoint)?;
    let samples = read_test_samples(dataset)?;
    let preds = predictor.predict(&samples, k)?;
    let rows: Vec<(u64, PredictionSet)> = samples.iter().map(|s| s.sample_id).zip(preds).collect();
    write_predictions(out, &rows)?;
    Ok(rows.len())
}

/// Hidden ground truth joined with the scenario of every test sample.
struct Truth {
    ids: Vec<u64>,
    scenario_ids: Vec<u32>,
    labels: Vec<usize>,
    powers: Vec<PowerVector>,
}

fn read_truth(dataset: &Path) -> Result<(Vec<ChallengeSample>, Truth)> {
    let samples = read_test_samples(dataset)?;
    let scenario_of: BTreeMap<u64, u32> = samples.iter().map(|s| (s.sample_id, s.scenario_id)).collect();
    let mut truth = Truth {
        ids: Vec::new(),
        scenario_ids: Vec::new(),
        labels: Vec::new(),
        powers: Vec::new(),
    };
    for h in read_hidden_labels(&dataset.join(LABELS_FILE))? {
        let scenario = scenario_of.get(&h.sample_id).ok_or_else(|| {
            CliError::Contract(format!("hidden label for sample {} has no test row", h.sample_id))
        })?;
        truth.ids.push(h.sample_id);
        truth.scenario_ids.push(*scenario);
        truth.labels.push(h.label);
        truth.powers.push(h.power_vector);
    }
    if truth.ids.len() != samples.len() {
        return Err(CliError::Contract(format!(
            "{} test rows but {} hidden labels",
            samples.len(),
            truth.ids.len()
        )));
    }
    Ok((samples, truth))
}

fn list_ids(ids: &[u64]) -> String {
    let shown: Vec<String> = ids.iter().take(20).map(u64::to_string).collect();
    let more = if ids.len() > 20 { format!(" (+{} more)", ids.len() - 20) } else { String::new() };
    format!("{}{more}", shown.join(", "))
}

fn subset_report(cfg: &ExperimentConfig, truth: &Truth, preds: &[PredictionSet], keep: &[usize]) -> Result<MetricReport> {
    let p: Vec<_> = keep.iter().map(|&i| preds[i].clone()).collect();
    let l: Vec<_> = keep.iter().map(|&i| truth.labels[i]).collect();
    let w: Vec<_> = keep.iter().map(|&i| truth.powers[i].clone()).collect();
    let s: Vec<_> = keep.iter().map(|&i| truth.scenario_ids[i]).collect();
    Ok(evaluate(&p, &l, Some(&w), &s, &cfg.metrics)?)
}

pub struct ScoreSummary {
    pub overall: MetricReport,
    pub seen: Option<MetricReport>,
    pub unseen: Option<MetricReport>,
    /// Seen DBA minus unseen DBA.
    pub generalization_gap: Option<f64>,
    pub table: String,
}

/// Scores a prediction file against the hidden labels of `dataset`, overall,
/// for seen and unseen scenarios and per scenario. Writes `score.csv` and
/// `score.txt` into `out`.
pub fn score(cfg: &ExperimentConfig, predictions: &Path, dataset: &Path, out: &Path) -> Result<ScoreSummary> {
    let (csv_path, txt_path) = (out.join(SCORE_CSV), out.join(SCORE_TXT));
    ensure_fresh(&[&csv_path, &txt_path])?;
    let (_, truth) = read_truth(dataset)?;
    let mut submitted: BTreeMap<u64, PredictionSet> = BTreeMap::new();
    for (id, p) in read_predictions(predictions, cfg.array.num_beams)? {
        if submitted.insert(id, p).is_some() {
            return Err(CliError::Contract(format!("sample {id} is predicted twice")));
        }
    }
    let missing: Vec<u64> = truth.ids.iter().copied().filter(|id| !submitted.contains_key(id)).collect();
    if !missing.is_empty() {
        return Err(CliError::Contract(format!("predictions missing for samples {}", list_ids(&missing))));
    }
    let known: BTreeSet<u64> = truth.ids.iter().copied().collect();
    let unknown: Vec<u64> = submitted.keys().copied().filter(|id| !known.contains(id)).collect();
    if !unknown.is_empty() {
        return Err(CliError::Contract(format!("predictions for unknown samples {}", list_ids(&unknown))));
    }
    let preds: Vec<PredictionSet> = truth.ids.iter().map(|id| submitted[id].clone()).collect();

    let all: Vec<usize> = (0..preds.len()).collect();
    let (seen_idx, unseen_idx): (Vec<usize>, Vec<usize>) =
        all.iter().partition(|&&i| cfg.is_seen(truth.scenario_ids[i]));
    let overall = subset_report(cfg, &truth, &preds, &all)?;
    let seen = (!seen_idx.is_empty()).then(|| subset_report(cfg, &truth, &preds, &seen_idx)).transpose()?;
    let unseen = (!unseen_idx.is_empty()).then(|| subset_report(cfg, &truth, &preds, &unseen_idx)).transpose()?;
    let generalization_gap = seen.as_ref().zip(unseen.as_ref()).map(|(s, u)| s.dba_score - u.dba_score);

    let mut rows: Vec<(String, &MetricReport)> = vec![("overall".into(), &overall)];
    if let Some(s) = &seen {
        rows.push(("seen".into(), s));
    }
    if let Some(u) = &unseen {
        rows.push(("unseen".into(), u));
    }
    for (id, r) in &overall.per_scenario {
        rows.push((format!("scenario{id}"), r));
    }
    let named: Vec<(&str, &MetricReport)> = rows.iter().map(|(n, r)| (n.as_str(), *r)).collect();

    let mut kv = overall.to_kv("overall.");
    for (name, r) in named.iter().skip(1).take_while(|(n, _)| !n.starts_with("scenario")) {
        let mut r = (*r).clone();
        r.per_scenario.clear();
        kv.push_str(&r.to_kv(&format!("{name}.")));
    }
    if let Some(gap) = generalization_gap {
        let _ = writeln!(kv, "generalization_gap = {gap:.6}");
    }
    create_dir(out)?;
    write_text(&csv_path, &table_csv(&named))?;
    write_text(&txt_path, &kv)?;

    let mut table = format_table(&named);
    if let Some(gap) = generalization_gap {
        let _ = writeln!(table, "Generalization gap (seen DBA - unseen DBA): {gap:.4}");
    }
    Ok(ScoreSummary {
        overall,
        seen,
        unseen,
        generalization_gap,
        table,
    })
}

/// One evaluated checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationPoint {
    pub checkpoint: String,
    pub epoch: usize,
    pub top_k_accuracy: Vec<f64>,
    pub dba_score: f64,
    pub power_ratio: f64,
}

pub fn points_csv(points: &[CorrelationPoint]) -> String {
    let k = points.first().map_or(0, |p| p.top_k_accuracy.len());
    let mut out = String::from("checkpoint,epoch");
    for i in 1..=k {
        let _ = write!(out, ",top_{i}");
    }
    out.push_str(",dba,power_ratio\n");
    for p in points {
        let _ = write!(out, "{},{}", p.checkpoint, p.epoch);
        for a in &p.top_k_accuracy {
            let _ = write!(out, ",{a:?}");
        }
        let _ = writeln!(out, ",{:?},{:?}", p.dba_score, p.power_ratio);
    }
    out
}

pub fn parse_points_csv(text: &str) -> Result<Vec<CorrelationPoint>> {
    let bad = |row: usize, msg: &str| CliError::Contract(format!("correlation points row {row}: {msg}"));
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| bad(1, "empty file"))?.split(',').collect();
    if header.len() < 5 || header[..2] != ["checkpoint", "epoch"] || header[header.len() - 2..] != ["dba", "power_ratio"] {
        return Err(bad(1, "unexpected header"));
    }
    let k = header.len() - 4;
    lines
        .enumerate()
        .map(|(i, line)| {
            let row = i + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != header.len() {
                return Err(bad(row, "wrong field count"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(row, "not a number"));
            Ok(CorrelationPoint {
                checkpoint: f[0].to_string(),
                epoch: f[1].parse().map_err(|_| bad(row, "invalid epoch"))?,
                top_k_accuracy: f[2..2 + k].iter().map(|s| num(s)).collect::<Result<_>>()?,
                dba_score: num(f[2 + k])?,
                power_ratio: num(f[3 + k])?,
            })
        })
        .collect()
}

pub struct CorrelateSummary {
    pub points: Vec<CorrelationPoint>,
    pub table: CorrelationTable,
}

/// Evaluates every `*.ckpt` in `checkpoints` on the labelled test set and
/// correlates top-k accuracy and DBA with the power ratio. Writes
/// `correlation_points.csv` and `correlation.txt` into `out`.
pub fn correlate(cfg: &ExperimentConfig, checkpoints: &Path, dataset: &Path, out: &Path) -> Result<CorrelateSummary> {
    let (points_path, txt_path) = (out.join(POINTS_CSV), out.join(CORRELATION_TXT));
    ensure_fresh(&[&points_path, &txt_path])?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(checkpoints)
        .map_err(|e| CliError::io(checkpoints, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| CliError::io(checkpoints, e)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "ckpt"))
        .collect();
    files.sort();
    if files.len() < 3 {
        return Err(CliError::Core(beampred::Error::InsufficientData(format!(
            "{} holds {} checkpoints, at least 3 are needed",
            checkpoints.display(),
            files.len()
        ))));
    }
    let (samples, truth) = read_truth(dataset)?;
    let by_id: BTreeMap<u64, &ChallengeSample> = samples.iter().map(|s| (s.sample_id, s)).collect();
    let ordered: Vec<ChallengeSample> = truth.ids.iter().map(|id| by_id[id].clone()).collect();

    let mut points = Vec::with_capacity(files.len());
    let mut reports = Vec::with_capacity(files.len());
    for path in &files {
        let predictor = Predictor::load(cfg, path)?;
        let preds = predictor.predict(&ordered, cfg.metrics.top_k)?;
        let report = evaluate(&preds, &truth.labels, Some(&truth.powers), &truth.scenario_ids, &cfg.metrics)?;
        points.push(CorrelationPoint {
            checkpoint: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            epoch: predictor.epoch,
            top_k_accuracy: report.top_k_accuracy.clone(),
            dba_score: report.dba_score,
            power_ratio: report.power_ratio.map_or(f64::NAN, |p| p.value),
        });
        reports.push(report);
    }
    let table = metric_correlation(&reports)?;

    let mut kv = String::new();
    let _ = writeln!(kv, "checkpoints = {}", points.len());
    let _ = writeln!(kv, "dba_vs_power_ratio = {:?}", table.dba_vs_power.value);
    let _ = writeln!(kv, "dba_zero_variance = {}", table.dba_vs_power.zero_variance);
    for (k, c) in table.top_k_vs_power.iter().enumerate() {
        let _ = writeln!(kv, "top{}_vs_power_ratio = {:?}", k + 1, c.value);
        let _ = writeln!(kv, "top{}_zero_variance = {}", k + 1, c.zero_variance);
    }
    create_dir(out)?;
    write_text(&points_path, &points_csv(&points))?;
    write_text(&txt_path, &kv)?;
    Ok(CorrelateSummary { points, table })
}
