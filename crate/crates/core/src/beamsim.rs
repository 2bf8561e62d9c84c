//! Uniform linear array, oversampled beam codebook and geometric channel.
//!
//! Complex arithmetic is double precision throughout. Beam and subcarrier
//! indices are 0-based here; the file formats convert at the boundary.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Basestation array and codebook geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArrayConfig {
    /// Number of ULA elements.
    pub num_antennas: usize,
    /// Number of codebook beams.
    pub num_beams: usize,
    /// Number of OFDM subcarriers averaged in the receive power.
    pub num_subcarriers: usize,
    /// Element spacing as a fraction of the wavelength.
    pub element_spacing: f64,
    /// Half-width of the codebook's coverage in sine space: beams are laid
    /// out uniformly over `[-sector, sector]`. `1.0` spans the full visible
    /// region.
    pub sector: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            num_antennas: 16,
            num_beams: 64,
            num_subcarriers: 32,
            element_spacing: 0.5,
            sector: 0.5,
        }
    }
}

impl ArrayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_antennas == 0 {
            return Err(Error::Config("num_antennas must be positive".into()));
        }
        if self.num_beams < self.num_antennas {
            return Err(Error::Config(format!(
                "codebook needs at least as many beams as antennas (Q = {} < M = {})",
                self.num_beams, self.num_antennas
            )));
        }
        if self.num_subcarriers == 0 {
            return Err(Error::Config("num_subcarriers must be at least 1".into()));
        }
        if !(self.element_spacing > 0.0 && self.element_spacing.is_finite()) {
            return Err(Error::Config("element_spacing must be positive".into()));
        }
        if !(self.sector > 0.0 && self.sector <= 1.0) {
            return Err(Error::Config("sector must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Sine of the pointing direction of beam `q`: the centre of the `q`-th
    /// of `Q` equal cells tiling `[-sector, sector]`.
    pub fn grid_sine(&self, q: usize) -> f64 {
        let q_total = self.num_beams as f64;
        self.sector * (-1.0 + (2.0 * q as f64 + 1.0) / q_total)
    }
}

/// ULA response towards `sin_angle`: element `m` is `exp(j 2π d m sinθ)`.
/// Not normalised.
pub fn steering_vector(sin_angle: f64, config: &ArrayConfig) -> Result<Vec<Complex64>> {
    if !(sin_angle.abs() <= 1.0) {
        return Err(Error::Domain(format!(
            "sine of arrival angle must lie in [-1, 1], got {sin_angle}"
        )));
    }
    let step = 2.0 * PI * config.element_spacing * sin_angle;
    Ok((0..config.num_antennas)
        .map(|m| Complex64::from_polar(1.0, step * m as f64))
        .collect())
}

/// The fixed set of receive beams searched during beam training.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamCodebook {
    config: ArrayConfig,
    beams: Vec<Vec<Complex64>>,
}

impl BeamCodebook {
    pub fn config(&self) -> &ArrayConfig {
        &self.config
    }

    pub fn beams(&self) -> &[Vec<Complex64>] {
        &self.beams
    }

    pub fn beam(&self, q: usize) -> &[Complex64] {
        &self.beams[q]
    }

    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }
}

/// Builds the oversampled codebook: beam `q` is the conjugate steering
/// vector towards [`ArrayConfig::grid_sine`]`(q)`, scaled to unit norm.
pub fn build_codebook(config: &ArrayConfig) -> Result<BeamCodebook> {
    config.validate()?;
    let scale = 1.0 / (config.num_antennas as f64).sqrt();
    let beams = (0..config.num_beams)
        .map(|q| {
            steering_vector(config.grid_sine(q), config)
                .map(|a| a.into_iter().map(|x| x.conj() * scale).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BeamCodebook {
        config: *config,
        beams,
    })
}

/// Per-subcarrier channel vectors for one user snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    per_subcarrier: Vec<Vec<Complex64>>,
    noise_power: f64,
    tx_power: f64,
}

impl ChannelState {
    pub fn new(per_subcarrier: Vec<Vec<Complex64>>, noise_power: f64, tx_power: f64) -> Result<Self> {
        if per_subcarrier.is_empty() {
            return Err(Error::Shape("channel needs at least one subcarrier".into()));
        }
        let m = per_subcarrier[0].len();
        if per_subcarrier.iter().any(|h| h.len() != m) {
            return Err(Error::Shape("subcarrier vectors differ in length".into()));
        }
        if per_subcarrier
            .iter()
            .flatten()
            .any(|h| !(h.re.is_finite() && h.im.is_finite()))
        {
            return Err(Error::Numerical("channel contains non-finite entries".into()));
        }
        if !(noise_power >= 0.0 && noise_power.is_finite()) {
            return Err(Error::Domain("noise_power must be non-negative".into()));
        }
        if !(tx_power > 0.0 && tx_power.is_finite()) {
            return Err(Error::Domain("tx_power must be positive".into()));
        }
        Ok(Self {
            per_subcarrier,
            noise_power,
            tx_power,
        })
    }

    pub fn per_subcarrier(&self) -> &[Vec<Complex64>] {
        &self.per_subcarrier
    }

    pub fn noise_power(&self) -> f64 {
        self.noise_power
    }

    pub fn tx_power(&self) -> f64 {
        self.tx_power
    }

    pub fn num_antennas(&self) -> usize {
        self.per_subcarrier[0].len()
    }

    /// Multiplies every channel coefficient by `c`.
    pub fn scaled(&self, c: Complex64) -> Self {
        Self {
            per_subcarrier: self
                .per_subcarrier
                .iter()
                .map(|h| h.iter().map(|x| x * c).collect())
                .collect(),
            ..*self
        }
    }
}

/// Linear receive power per codebook beam.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerVector(Vec<f64>);

impl PowerVector {
    pub fn new(powers: Vec<f64>) -> Result<Self> {
        if powers.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Domain(
                "receive powers must be finite and non-negative".into(),
            ));
        }
        Ok(Self(powers))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Beamforming gain of every codebook beam, averaged over subcarriers and
/// scaled by the transmit power: `P (1/K) Σ_k |h_kᵀ f_q|²`. Noiseless.
pub fn receive_power(channel: &ChannelState, codebook: &BeamCodebook) -> Result<PowerVector> {
    let m = codebook.config.num_antennas;
    if channel.num_antennas() != m {
        return Err(Error::Shape(format!(
            "channel has {} antennas, codebook expects {m}",
            channel.num_antennas()
        )));
    }
    let k = channel.per_subcarrier.len() as f64;
    let powers = codebook
        .beams
        .iter()
        .map(|f| {
            let total: f64 = channel
                .per_subcarrier
                .iter()
                .map(|h| {
                    h.iter()
                        .zip(f)
                        .map(|(hm, fm)| hm * fm)
                        .sum::<Complex64>()
                        .norm_sqr()
                })
                .sum();
            channel.tx_power * total / k
        })
        .collect();
    PowerVector::new(powers)
}

/// Index of the strongest beam; ties go to the lowest index.
pub fn optimal_beam(powers: &[f64]) -> Result<usize> {
    let (first, rest) = powers
        .split_first()
        .ok_or_else(|| Error::Domain("cannot select a beam from an empty power vector".into()))?;
    let mut best = (0, *first);
    for (q, &p) in rest.iter().enumerate() {
        if p > best.1 {
            best = (q + 1, p);
        }
    }
    Ok(best.0)
}

/// One propagation path impinging on the array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationPath {
    /// Complex amplitude.
    pub gain: Complex64,
    /// Sine of the angle of arrival relative to boresight.
    pub sin_angle: f64,
    /// Delay in units of the OFDM sample period.
    pub delay: f64,
}

/// Large-scale propagation parameters for [`synth_channel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Propagation {
    /// LOS amplitude at 1 m.
    pub ref_amplitude: f64,
    /// LOS amplitude falls off as `distance^-amplitude_exponent`.
    pub amplitude_exponent: f64,
    pub tx_power: f64,
    pub noise_power: f64,
}

impl Default for Propagation {
    fn default() -> Self {
        Self {
            ref_amplitude: 1.0,
            amplitude_exponent: 1.0,
            tx_power: 1.0,
            noise_power: 0.0,
        }
    }
}

/// `h_k = Σ_l α_l exp(-j2π k d_l / K) a(sinθ_l)` for `k = 1..=K`.
pub fn channel_from_paths(
    paths: &[PropagationPath],
    config: &ArrayConfig,
    propagation: &Propagation,
) -> Result<ChannelState> {
    config.validate()?;
    let k_total = config.num_subcarriers;
    let responses = paths
        .iter()
        .map(|p| {
            if !(p.gain.re.is_finite() && p.gain.im.is_finite() && p.delay.is_finite()) {
                return Err(Error::Domain("path gain and delay must be finite".into()));
            }
            steering_vector(p.sin_angle, config)
        })
        .collect::<Result<Vec<_>>>()?;
    let per_subcarrier = (1..=k_total)
        .map(|k| {
            let mut h = vec![Complex64::new(0.0, 0.0); config.num_antennas];
            for (path, a) in paths.iter().zip(&responses) {
                let phase = -2.0 * PI * k as f64 * path.delay / k_total as f64;
                let coeff = path.gain * Complex64::from_polar(1.0, phase);
                for (hm, am) in h.iter_mut().zip(a) {
                    *hm += coeff * am;
                }
            }
            h
        })
        .collect();
    ChannelState::new(per_subcarrier, propagation.noise_power, propagation.tx_power)
}

/// Geometric channel for a user at `user_xy` metres in the array frame
/// (x along the array axis, y along boresight). A line-of-sight path with
/// inverse-distance amplitude and zero delay is always present; `extra_paths`
/// are added on top.
pub fn synth_channel(
    user_xy: [f64; 2],
    extra_paths: &[PropagationPath],
    config: &ArrayConfig,
    propagation: &Propagation,
) -> Result<ChannelState> {
    let distance = user_xy[0].hypot(user_xy[1]);
    if !distance.is_finite() {
        return Err(Error::Geometry("user position must be finite".into()));
    }
    if distance < 1e-6 {
        return Err(Error::Geometry(
            "user coincides with the basestation origin".into(),
        ));
    }
    let los = PropagationPath {
        gain: Complex64::new(
            propagation.ref_amplitude / distance.powf(propagation.amplitude_exponent),
            0.0,
        ),
        sin_angle: (user_xy[0] / distance).clamp(-1.0, 1.0),
        delay: 0.0,
    };
    let mut paths = Vec::with_capacity(1 + extra_paths.len());
    paths.push(los);
    paths.extend_from_slice(extra_paths);
    channel_from_paths(&paths, config, propagation)
}

/// Inclusive index range of the contiguous run of beams around the peak whose
/// power is at least `fraction` of the peak.
pub fn near_peak_region(powers: &[f64], fraction: f64) -> Result<(usize, usize)> {
    let peak_idx = optimal_beam(powers)?;
    let threshold = fraction * powers[peak_idx];
    let mut lo = peak_idx;
    while lo > 0 && powers[lo - 1] >= threshold {
        lo -= 1;
    }
    let mut hi = peak_idx;
    while hi + 1 < powers.len() && powers[hi + 1] >= threshold {
        hi += 1;
    }
    Ok((lo, hi))
}
