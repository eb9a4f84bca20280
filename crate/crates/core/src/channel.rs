//! Fading channels, RIS phase configurations, beamforming, and the
//! end-to-end received-signal path.
//!
//! The downlink cascade is `destination row <- RIS reflection <- source
//! matrix`: an `N x M` source-to-RIS matrix, an `N x N` diagonal
//! reflection matrix with per-element amplitude `chi_i <= 1` and phase
//! `theta_i`, and a length-`N` RIS-to-destination row. A beamformer at
//! the source collapses the cascade to one effective scalar channel per
//! user.

use crate::rng::{stream_rng, StreamPurpose};
use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use std::f64::consts::{PI, TAU};
use thiserror::Error;

/// Reference gain of the distance pathloss law at unit distance.
pub const PATHLOSS_REF_GAIN: f64 = 1e-2;
/// Pathloss exponent of the distance law.
pub const PATHLOSS_EXPONENT: f64 = 3.75;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("nakagami shape m = {0} must be >= 0.5")]
    InvalidShape(f64),
    #[error("nakagami spread omega = {0} must be > 0")]
    InvalidSpread(f64),
    #[error("distance {0} must be > 0")]
    NonPositiveDistance(f64),
    #[error("reflection amplitude {0} outside [0, 1]")]
    InvalidReflectionAmplitude(f64),
    #[error("phase config has {amplitudes} amplitudes but {angles} angles")]
    PhaseLengthMismatch { amplitudes: usize, angles: usize },
    #[error("beamformer power {norm_sq} exceeds budget {budget}")]
    PowerBudgetExceeded { norm_sq: f64, budget: f64 },
    #[error("effective channel is zero; beamformer undefined")]
    ZeroChannel,
    #[error("noise variance {0} must be > 0")]
    InvalidNoiseVariance(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("SNR undefined: no noise and no interferers")]
    DegenerateSnr,
}

/// Small-scale fading law for channel matrix entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FadingModel {
    /// Zero-mean circularly-symmetric complex Gaussian entries, unit variance.
    Rayleigh,
    /// Nakagami magnitude with shape `m` and spread (mean power) `omega`,
    /// phase uniform on `[0, 2*pi)`. Reduces to Rayleigh at `m = 1, omega = 1`.
    Nakagami { m: f64, omega: f64 },
}

impl FadingModel {
    pub fn nakagami(m: f64, omega: f64) -> Result<Self, ChannelError> {
        if !(m >= 0.5) {
            return Err(ChannelError::InvalidShape(m));
        }
        if !(omega > 0.0) {
            return Err(ChannelError::InvalidSpread(omega));
        }
        Ok(FadingModel::Nakagami { m, omega })
    }

    /// Mean power `E[|h|^2]` of one entry.
    pub fn mean_power(&self) -> f64 {
        match self {
            FadingModel::Rayleigh => 1.0,
            FadingModel::Nakagami { omega, .. } => *omega,
        }
    }
}

/// One entry under the given fading law.
fn sample_entry(model: &FadingModel, rng: &mut ChaCha8Rng) -> Complex64 {
    match model {
        FadingModel::Rayleigh => {
            // CN(0,1): each axis N(0, 1/2)
            let s = std::f64::consts::FRAC_1_SQRT_2;
            let re: f64 = rand_distr::StandardNormal.sample(rng);
            let im: f64 = rand_distr::StandardNormal.sample(rng);
            Complex64::new(re * s, im * s)
        }
        FadingModel::Nakagami { m, omega } => {
            // power ~ Gamma(shape m, scale omega/m); magnitude = sqrt(power)
            let gamma = Gamma::new(*m, *omega / *m).expect("validated at construction");
            let magnitude = gamma.sample(rng).sqrt();
            let phase = rng.random_range(0.0..TAU);
            Complex64::from_polar(magnitude, phase)
        }
    }
}

/// Draws an `n_rows x n_cols` matrix of i.i.d. fading coefficients.
pub fn sample_channel(
    n_rows: usize,
    n_cols: usize,
    model: &FadingModel,
    rng: &mut ChaCha8Rng,
) -> Array2<Complex64> {
    assert!(n_rows > 0 && n_cols > 0, "channel dimensions must be positive");
    Array2::from_shape_fn((n_rows, n_cols), |_| sample_entry(model, rng))
}

/// Distance pathloss as a multiplicative power gain.
pub fn pathloss(distance: f64) -> Result<f64, ChannelError> {
    if !(distance > 0.0) {
        return Err(ChannelError::NonPositiveDistance(distance));
    }
    Ok(PATHLOSS_REF_GAIN * distance.powf(-PATHLOSS_EXPONENT))
}

/// One coherence block's fading state for a single user.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    /// Source-to-RIS matrix, `N x M`, as it appears in the cascade.
    pub source_ris: Array2<Complex64>,
    /// RIS-to-destination row, length `N`.
    pub ris_destination: Array1<Complex64>,
    pub fading: FadingModel,
    /// Multiplicative power scale on the cascaded channel; must be > 0.
    pub pathloss_gain: f64,
}

impl ChannelRealization {
    /// Draws both hops from the fading law.
    pub fn sample(
        n_elements: usize,
        n_antennas: usize,
        fading: FadingModel,
        pathloss_gain: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(pathloss_gain > 0.0, "pathloss gain must be positive");
        Self {
            source_ris: sample_channel(n_elements, n_antennas, &fading, rng),
            ris_destination: sample_channel(n_elements, 1, &fading, rng).column(0).to_owned(),
            fading,
            pathloss_gain,
        }
    }

    /// Unit-magnitude degenerate channels (all-ones hops); diagnostic use.
    pub fn all_ones(n_elements: usize, n_antennas: usize, pathloss_gain: f64) -> Self {
        Self {
            source_ris: Array2::from_elem((n_elements, n_antennas), Complex64::new(1.0, 0.0)),
            ris_destination: Array1::from_elem(n_elements, Complex64::new(1.0, 0.0)),
            fading: FadingModel::Rayleigh,
            pathloss_gain,
        }
    }

    pub fn n_elements(&self) -> usize {
        self.source_ris.nrows()
    }

    pub fn n_antennas(&self) -> usize {
        self.source_ris.ncols()
    }
}

/// Reflection amplitudes and phase angles of the RIS elements.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseConfig {
    amplitudes: Vec<f64>,
    angles: Vec<f64>,
}

impl PhaseConfig {
    /// Validates amplitudes in `[0, 1]` and wraps angles into `[0, 2*pi)`.
    pub fn new(amplitudes: Vec<f64>, angles: Vec<f64>) -> Result<Self, ChannelError> {
        if amplitudes.len() != angles.len() {
            return Err(ChannelError::PhaseLengthMismatch {
                amplitudes: amplitudes.len(),
                angles: angles.len(),
            });
        }
        for &a in &amplitudes {
            if !(0.0..=1.0).contains(&a) {
                return Err(ChannelError::InvalidReflectionAmplitude(a));
            }
        }
        let angles = angles.into_iter().map(wrap_angle).collect();
        Ok(Self { amplitudes, angles })
    }

    /// Maximal reflection (`chi_i = 1`) with the given angles.
    pub fn maximal(angles: Vec<f64>) -> Self {
        let amplitudes = vec![1.0; angles.len()];
        let angles = angles.into_iter().map(wrap_angle).collect();
        Self { amplitudes, angles }
    }

    /// All elements reflecting with zero phase shift.
    pub fn zero(n: usize) -> Self {
        Self::maximal(vec![0.0; n])
    }

    /// Maximal reflection with angles i.i.d. uniform on `[0, 2*pi)`.
    pub fn uniform_random(n: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::maximal((0..n).map(|_| rng.random_range(0.0..TAU)).collect())
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    /// Per-element complex reflection coefficients `chi_i * exp(j*theta_i)`.
    pub fn coefficients(&self) -> impl Iterator<Item = Complex64> + '_ {
        self.amplitudes
            .iter()
            .zip(&self.angles)
            .map(|(&a, &t)| Complex64::from_polar(a, t))
    }
}

fn wrap_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t == TAU {
        0.0
    } else {
        t
    }
}

/// The `N x N` diagonal reflection matrix of a phase configuration.
pub fn build_phase_matrix(cfg: &PhaseConfig) -> Array2<Complex64> {
    Array2::from_diag(&Array1::from_iter(cfg.coefficients()))
}

/// Source beamforming vector under a transmit power budget.
#[derive(Debug, Clone)]
pub struct Beamformer {
    weights: Array1<Complex64>,
    power_budget: f64,
}

impl Beamformer {
    pub fn new(weights: Array1<Complex64>, power_budget: f64) -> Result<Self, ChannelError> {
        let norm_sq: f64 = weights.iter().map(|w| w.norm_sqr()).sum();
        if norm_sq > power_budget * (1.0 + 1e-9) {
            return Err(ChannelError::PowerBudgetExceeded {
                norm_sq,
                budget: power_budget,
            });
        }
        Ok(Self {
            weights,
            power_budget,
        })
    }

    /// Equal-weight beamformer spending the whole budget.
    pub fn uniform(n_antennas: usize, power_budget: f64) -> Self {
        let w = (power_budget / n_antennas as f64).sqrt();
        Self {
            weights: Array1::from_elem(n_antennas, Complex64::new(w, 0.0)),
            power_budget,
        }
    }

    /// All-ones weights; useful where per-element cascade sums are inspected.
    pub fn unit_entries(n_antennas: usize) -> Self {
        Self {
            weights: Array1::from_elem(n_antennas, Complex64::new(1.0, 0.0)),
            power_budget: n_antennas as f64,
        }
    }

    pub fn weights(&self) -> &Array1<Complex64> {
        &self.weights
    }

    pub fn power_budget(&self) -> f64 {
        self.power_budget
    }

    pub fn norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w.norm_sqr()).sum()
    }
}

/// Additive receiver noise, zero-mean circularly-symmetric Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    variance: f64,
}

impl NoiseModel {
    pub fn new(variance: f64) -> Result<Self, ChannelError> {
        if !(variance > 0.0) {
            return Err(ChannelError::InvalidNoiseVariance(variance));
        }
        Ok(Self { variance })
    }

    /// Exactly zero noise; useful for consistency oracles.
    pub fn silent() -> Self {
        Self { variance: 0.0 }
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Complex64 {
        if self.variance == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let s = (self.variance / 2.0).sqrt();
        let re: f64 = rand_distr::StandardNormal.sample(rng);
        let im: f64 = rand_distr::StandardNormal.sample(rng);
        Complex64::new(re * s, im * s)
    }
}

/// The length-`M` cascaded row channel seen at the destination,
/// including the amplitude pathloss scale:
/// `row[m] = sqrt(pathloss) * sum_i d[i] * conj(phi_i) * S[i, m]`
/// with `d` the RIS-to-destination row, `phi` the reflection
/// coefficients, and `S` the source-to-RIS matrix.
pub fn effective_row_channel(ch: &ChannelRealization, phases: &PhaseConfig) -> Array1<Complex64> {
    assert_eq!(
        phases.len(),
        ch.n_elements(),
        "phase config length must match the element count"
    );
    let scale = ch.pathloss_gain.sqrt();
    let mut row = Array1::from_elem(ch.n_antennas(), Complex64::new(0.0, 0.0));
    for (i, phi) in phases.coefficients().enumerate() {
        let d_phi = ch.ris_destination[i] * phi.conj();
        for (m, r) in row.iter_mut().enumerate() {
            *r += d_phi * ch.source_ris[(i, m)];
        }
    }
    row.mapv_inplace(|v| v * scale);
    row
}

/// Chooses phases so every per-element contribution to the effective
/// scalar channel arrives with zero phase: with unit reflection,
/// `|row * v| = sum_i |d[i]| * |(S v)[i]|` afterwards.
pub fn cophase(ch: &ChannelRealization, beam: &Beamformer) -> PhaseConfig {
    assert_eq!(
        beam.weights().len(),
        ch.n_antennas(),
        "beamformer length must match the antenna count"
    );
    let incident = ch.source_ris.dot(beam.weights());
    let angles = ch
        .ris_destination
        .iter()
        .zip(incident.iter())
        .map(|(d, w)| (d * w).arg())
        .collect();
    PhaseConfig::maximal(angles)
}

/// Mean and variance of the co-phased cascade gain
/// `A = sum_i |d[i]| * |s[i]|` over unit-variance Rayleigh hops:
/// `(N*pi/4, N*(1 - pi^2/16))`.
pub fn gain_moments(n_elements: usize) -> (f64, f64) {
    assert!(n_elements >= 1);
    let n = n_elements as f64;
    (n * PI / 4.0, n * (1.0 - PI * PI / 16.0))
}

/// Maximum-ratio transmission on the effective cascaded channel:
/// `v = sqrt(P) * row^H / ||row||`, the power-constrained maximizer of
/// `|row * v|^2`.
pub fn mrt_beamformer(
    ch: &ChannelRealization,
    phases: &PhaseConfig,
    power_budget: f64,
) -> Result<Beamformer, ChannelError> {
    let row = effective_row_channel(ch, phases);
    let norm: f64 = row.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(ChannelError::ZeroChannel);
    }
    let scale = power_budget.sqrt() / norm;
    let weights = row.mapv(|v| v.conj() * scale);
    Ok(Beamformer {
        weights,
        power_budget,
    })
}

/// Received samples at one user's antenna: the cascaded row channel applied
/// to the superposition of all users' beamformed symbol streams, plus
/// independent noise draws.
pub fn transmit(
    ch: &ChannelRealization,
    phases: &PhaseConfig,
    beamformers: &[Beamformer],
    symbols: &[Vec<Complex64>],
    noise: &NoiseModel,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Complex64>, ChannelError> {
    if beamformers.is_empty() || beamformers.len() != symbols.len() {
        return Err(ChannelError::DimensionMismatch(format!(
            "{} beamformers for {} symbol streams",
            beamformers.len(),
            symbols.len()
        )));
    }
    let len = symbols[0].len();
    if symbols.iter().any(|s| s.len() != len) {
        return Err(ChannelError::DimensionMismatch(
            "symbol streams have unequal lengths".into(),
        ));
    }
    for b in beamformers {
        if b.weights().len() != ch.n_antennas() {
            return Err(ChannelError::DimensionMismatch(format!(
                "beamformer length {} for {} antennas",
                b.weights().len(),
                ch.n_antennas()
            )));
        }
    }
    let row = effective_row_channel(ch, phases);
    // per-user effective scalar channels
    let gains: Vec<Complex64> = beamformers
        .iter()
        .map(|b| row.iter().zip(b.weights()).map(|(r, w)| r * w).sum())
        .collect();
    let mut received = Vec::with_capacity(len);
    for t in 0..len {
        let mut y = Complex64::new(0.0, 0.0);
        for (g, stream) in gains.iter().zip(symbols) {
            y += g * stream[t];
        }
        received.push(y + noise.sample(rng));
    }
    Ok(received)
}

/// Received SNR of user `u` under superposed beams:
/// `|g v_u|^2 / (sum_{j != u} |g v_j|^2 + sigma^2)`.
pub fn received_snr(
    ch: &ChannelRealization,
    phases: &PhaseConfig,
    beamformers: &[Beamformer],
    user: usize,
    noise_variance: f64,
) -> Result<f64, ChannelError> {
    if user >= beamformers.len() {
        return Err(ChannelError::DimensionMismatch(format!(
            "user {user} out of {} beamformers",
            beamformers.len()
        )));
    }
    let row = effective_row_channel(ch, phases);
    let powers: Vec<f64> = beamformers
        .iter()
        .map(|b| {
            row.iter()
                .zip(b.weights())
                .map(|(r, w)| r * w)
                .sum::<Complex64>()
                .norm_sqr()
        })
        .collect();
    let interference: f64 = powers
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != user)
        .map(|(_, p)| p)
        .sum();
    let denom = interference + noise_variance;
    if denom <= 0.0 {
        return Err(ChannelError::DegenerateSnr);
    }
    Ok(powers[user] / denom)
}

/// Expected received signal power for unit-energy symbols under
/// maximum-ratio transmission with independent uniform phases:
/// `P * pathloss * M * N * mean_power(fading)^2`.
pub fn nominal_received_power(
    n_elements: usize,
    n_antennas: usize,
    power_budget: f64,
    pathloss_gain: f64,
    fading: &FadingModel,
) -> f64 {
    let mp = fading.mean_power();
    power_budget * pathloss_gain * n_antennas as f64 * n_elements as f64 * mp * mp
}

/// Helper to draw a stream-addressed generator for channel work.
pub fn channel_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    stream_rng(master_seed, StreamPurpose::Scratch, index)
}
