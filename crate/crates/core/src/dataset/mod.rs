//! Synthetic challenge scenarios and sequence samples.
//!
//! A scenario is a basestation next to a straight road. Vehicles drive the
//! road at constant speed; every GPS tick yields the true position, a noisy
//! GPS fix and the noiseless per-beam receive power at the true position.
//! Consecutive ticks are cut into windows of five: the first two GPS fixes
//! are the model input, the beam at the fifth tick is the label.

mod files;

pub use files::{
    format_sig9, quantize_sig9, read_hidden_labels, read_predictions, read_samples, write_hidden_labels,
    write_predictions, write_samples, HiddenLabel, SampleFileKind,
};

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::beamsim::{build_codebook, optimal_beam, receive_power, synth_channel, ArrayConfig, PowerVector, Propagation};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geodesy::{latlon_to_utm, relative_position, GeoPosition};

/// Sensing window length (time steps `t-4 ..= t`).
pub const SEQUENCE_LEN: usize = 5;
/// Number of GPS fixes per sample (steps `t-4`, `t-3`).
pub const POSITION_LEN: usize = 2;

/// SplitMix64 finaliser; derives independent stream seeds from a master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario_id: u32,
    pub bs_position: GeoPosition,
    /// Bearing of the array broadside, degrees clockwise from grid north.
    #[serde(default)]
    pub bs_boresight_deg: f64,
    pub road_start: GeoPosition,
    pub road_end: GeoPosition,
    pub num_trajectories: usize,
    /// Metres per second.
    pub speed: f64,
    /// GPS ticks per second.
    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
    /// Standard deviation of the per-axis GPS error, metres.
    #[serde(default = "default_gps_noise")]
    pub gps_noise_std: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub propagation: Propagation,
}

fn default_sample_rate() -> f64 {
    10.0
}

fn default_gps_noise() -> f64 {
    1.0
}

impl ScenarioConfig {
    /// Scenario whose road endpoints are given as east/north offsets in
    /// metres from the basestation.
    #[allow(clippy::too_many_arguments)]
    pub fn from_local(
        scenario_id: u32,
        bs_position: GeoPosition,
        bs_boresight_deg: f64,
        start_en: [f64; 2],
        end_en: [f64; 2],
        num_trajectories: usize,
        speed: f64,
        seed: u64,
    ) -> Self {
        Self {
            scenario_id,
            bs_position,
            bs_boresight_deg,
            road_start: bs_position.offset(start_en[0], start_en[1]),
            road_end: bs_position.offset(end_en[0], end_en[1]),
            num_trajectories,
            speed,
            sample_rate: default_sample_rate(),
            gps_noise_std: default_gps_noise(),
            seed,
            propagation: Propagation::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bs_position.validate()?;
        self.road_start.validate()?;
        self.road_end.validate()?;
        if self.num_trajectories == 0 {
            return Err(Error::Config(format!(
                "scenario {}: num_trajectories must be positive",
                self.scenario_id
            )));
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return Err(Error::Config(format!("scenario {}: speed must be positive", self.scenario_id)));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::Config(format!(
                "scenario {}: sample_rate must be positive",
                self.scenario_id
            )));
        }
        if !(self.gps_noise_std >= 0.0 && self.gps_noise_std.is_finite()) {
            return Err(Error::Config(format!(
                "scenario {}: gps_noise_std must be non-negative",
                self.scenario_id
            )));
        }
        Ok(())
    }
}

/// One GPS tick of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub step: usize,
    pub true_position: GeoPosition,
    pub gps_position: GeoPosition,
    /// BS-relative true position in the array frame (x along the array axis,
    /// y along boresight), metres.
    pub array_xy: [f64; 2],
    pub power_vector: PowerVector,
    pub label: usize,
}

/// Time-ordered records of one pass along the road.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub scenario_id: u32,
    pub index: usize,
    pub records: Vec<RawRecord>,
}

fn east_north_to_array(en: [f64; 2], boresight_deg: f64) -> [f64; 2] {
    let (s, c) = boresight_deg.to_radians().sin_cos();
    [en[0] * c - en[1] * s, en[0] * s + en[1] * c]
}

pub fn generate_scenario(config: &ScenarioConfig, array: &ArrayConfig) -> Result<Vec<Trajectory>> {
    generate_scenario_with(Exec::default(), config, array)
}

/// Simulates every trajectory of a scenario. Trajectory `i` draws from its
/// own stream `derive_seed(config.seed, i)`, so the output does not depend on
/// the execution strategy.
pub fn generate_scenario_with(exec: Exec, config: &ScenarioConfig, array: &ArrayConfig) -> Result<Vec<Trajectory>> {
    config.validate()?;
    let codebook = build_codebook(array)?;
    let bs = latlon_to_utm(&config.bs_position)?;
    let start = latlon_to_utm(&config.road_start)?;
    let end = latlon_to_utm(&config.road_end)?;
    relative_position(&start, &bs)?;
    let length = relative_position(&end, &start)?;
    let length = length[0].hypot(length[1]);
    if length < 1e-6 {
        return Err(Error::Config(format!(
            "scenario {}: road segment has zero length",
            config.scenario_id
        )));
    }
    let step = config.speed / config.sample_rate;
    let noise = Normal::new(0.0, config.gps_noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(format!("gps noise: {e}")))?;

    exec.map_range(config.num_trajectories, |index| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, index as u64));
        let phase = rng.random::<f64>() * step;
        let mut records = Vec::new();
        let mut travelled = phase;
        while travelled <= length {
            let f = travelled / length;
            let true_position = GeoPosition {
                latitude: config.road_start.latitude + f * (config.road_end.latitude - config.road_start.latitude),
                longitude: config.road_start.longitude + f * (config.road_end.longitude - config.road_start.longitude),
            };
            let gps = if config.gps_noise_std > 0.0 {
                let (de, dn) = (noise.sample(&mut rng), noise.sample(&mut rng));
                true_position.offset(de, dn)
            } else {
                true_position
            };
            let gps_position = GeoPosition {
                latitude: quantize_sig9(gps.latitude),
                longitude: quantize_sig9(gps.longitude),
            };
            let en = relative_position(&latlon_to_utm(&true_position)?, &bs)?;
            let array_xy = east_north_to_array(en, config.bs_boresight_deg);
            let channel = synth_channel(array_xy, &[], array, &config.propagation)?;
            let powers = receive_power(&channel, &codebook)?
                .into_inner()
                .into_iter()
                .map(quantize_sig9)
                .collect();
            let power_vector = PowerVector::new(powers)?;
            let label = optimal_beam(power_vector.as_slice())?;
            records.push(RawRecord {
                step: records.len(),
                true_position,
                gps_position,
                array_xy,
                power_vector,
                label,
            });
            travelled += step;
        }
        Ok(Trajectory {
            scenario_id: config.scenario_id,
            index,
            records,
        })
    })
    .into_iter()
    .collect()
}

/// Placeholder references to the basestation's camera, LiDAR and radar
/// frames for the five steps of a window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModalityRefs {
    pub image: [String; SEQUENCE_LEN],
    pub lidar: [String; SEQUENCE_LEN],
    pub radar: [String; SEQUENCE_LEN],
}

impl ModalityRefs {
    fn synthetic(scenario_id: u32, trajectory: usize, first_step: usize) -> Self {
        let make = |sensor: &str, ext: &str| -> [String; SEQUENCE_LEN] {
            std::array::from_fn(|i| {
                format!(
                    "scenario{scenario_id}/traj{trajectory:03}/{sensor}/frame_{:05}.{ext}",
                    first_step + i
                )
            })
        };
        Self {
            image: make("camera", "jpg"),
            lidar: make("lidar", "ply"),
            radar: make("radar", "npy"),
        }
    }
}

/// One challenge data point.
#[derive(Debug, Clone, PartialEq)]
pub struct ChallengeSample {
    pub sample_id: u64,
    pub scenario_id: u32,
    /// GPS fixes at steps `t-4` and `t-3`.
    pub positions: [GeoPosition; POSITION_LEN],
    pub modality_refs: ModalityRefs,
    /// Receive power at step `t`; absent in test files.
    pub power_vector: Option<PowerVector>,
    /// Optimal beam at step `t` (0-based); absent in test files.
    pub label: Option<usize>,
}

impl ChallengeSample {
    pub fn without_labels(&self) -> Self {
        Self {
            power_vector: None,
            label: None,
            ..self.clone()
        }
    }
}

/// Sliding windows of [`SEQUENCE_LEN`] ticks with stride one. Sample ids are
/// left at zero for the caller to assign.
pub fn assemble_sequences(trajectory: &Trajectory) -> Vec<ChallengeSample> {
    trajectory
        .records
        .windows(SEQUENCE_LEN)
        .map(|w| {
            let last = &w[SEQUENCE_LEN - 1];
            ChallengeSample {
                sample_id: 0,
                scenario_id: trajectory.scenario_id,
                positions: std::array::from_fn(|i| w[i].gps_position),
                modality_refs: ModalityRefs::synthetic(trajectory.scenario_id, trajectory.index, w[0].step),
                power_vector: Some(last.power_vector.clone()),
                label: Some(last.label),
            }
        })
        .collect()
}

/// Generates and windows several scenarios, numbering samples consecutively
/// from `first_id` in scenario, trajectory, window order.
pub fn generate_samples(
    exec: Exec,
    scenarios: &[ScenarioConfig],
    array: &ArrayConfig,
    first_id: u64,
) -> Result<Vec<ChallengeSample>> {
    let mut samples = Vec::new();
    for scenario in scenarios {
        for trajectory in generate_scenario_with(exec, scenario, array)? {
            samples.extend(assemble_sequences(&trajectory));
        }
    }
    for (i, s) in samples.iter_mut().enumerate() {
        s.sample_id = first_id + i as u64;
    }
    Ok(samples)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetSplit {
    pub train: Vec<u64>,
    pub validation: Vec<u64>,
    pub test: Vec<u64>,
    /// Sample count per scenario in each split (train, validation, test).
    pub composition: BTreeMap<u32, [usize; 3]>,
}

/// Seeded permutation cut at the ratio boundaries.
pub fn split_dataset(samples: &[ChallengeSample], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if samples.is_empty() {
        return Err(Error::Config("cannot split an empty sample list".into()));
    }
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let n = samples.len();
    let n_train = (ratios[0] * n as f64).round() as usize;
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut split = DatasetSplit::default();
    for (rank, &i) in order.iter().enumerate() {
        let s = &samples[i];
        let part = if rank < n_train {
            0
        } else if rank < n_train + n_val {
            1
        } else {
            2
        };
        [&mut split.train, &mut split.validation, &mut split.test][part].push(s.sample_id);
        split.composition.entry(s.scenario_id).or_default()[part] += 1;
    }
    Ok(split)
}

/// A released challenge: labelled training data, a label-free test set and
/// the hidden answers.
#[derive(Debug, Clone, PartialEq)]
pub struct Challenge {
    pub train: Vec<ChallengeSample>,
    pub test: Vec<ChallengeSample>,
    pub hidden: Vec<HiddenLabel>,
}

/// Holds out `test_size / 2` random samples from the seen scenarios and
/// draws as many from the unseen scenario; everything else seen is training
/// data.
pub fn build_challenge(
    seen: &[ChallengeSample],
    unseen: &[ChallengeSample],
    test_size: usize,
    seed: u64,
) -> Result<Challenge> {
    let seen_ids: BTreeSet<u32> = seen.iter().map(|s| s.scenario_id).collect();
    let unseen_ids: BTreeSet<u32> = unseen.iter().map(|s| s.scenario_id).collect();
    if seen_ids.is_empty() {
        return Err(Error::Config("at least one training scenario is required".into()));
    }
    if let Some(id) = seen_ids.intersection(&unseen_ids).next() {
        return Err(Error::Config(format!("scenario {id} is both seen and unseen")));
    }
    if test_size == 0 || test_size % 2 != 0 {
        return Err(Error::Config(format!("test_size {test_size} must be positive and even")));
    }
    let half = test_size / 2;
    if seen.len() <= half {
        return Err(Error::Config(format!(
            "{} seen samples cannot supply {half} test samples and a training set",
            seen.len()
        )));
    }
    if unseen.len() < half {
        return Err(Error::Config(format!(
            "unseen scenario has {} samples, {half} required",
            unseen.len()
        )));
    }
    if seen.iter().chain(unseen).any(|s| s.label.is_none() || s.power_vector.is_none()) {
        return Err(Error::Contract("challenge construction needs labelled samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen_order: Vec<usize> = (0..seen.len()).collect();
    seen_order.shuffle(&mut rng);
    let mut unseen_order: Vec<usize> = (0..unseen.len()).collect();
    unseen_order.shuffle(&mut rng);

    let mut test_full: Vec<&ChallengeSample> = seen_order[..half]
        .iter()
        .map(|&i| &seen[i])
        .chain(unseen_order[..half].iter().map(|&i| &unseen[i]))
        .collect();
    test_full.sort_by_key(|s| s.sample_id);
    let mut train: Vec<ChallengeSample> = seen_order[half..].iter().map(|&i| seen[i].clone()).collect();
    train.sort_by_key(|s| s.sample_id);

    let ids: BTreeSet<u64> = train.iter().chain(test_full.iter().copied()).map(|s| s.sample_id).collect();
    if ids.len() != train.len() + test_full.len() {
        return Err(Error::Contract("sample ids are not unique across scenarios".into()));
    }
    let hidden = test_full
        .iter()
        .map(|s| HiddenLabel {
            sample_id: s.sample_id,
            label: s.label.expect("checked above"),
            power_vector: s.power_vector.clone().expect("checked above"),
        })
        .collect();
    Ok(Challenge {
        train,
        test: test_full.iter().map(|s| s.without_labels()).collect(),
        hidden,
    })
}
