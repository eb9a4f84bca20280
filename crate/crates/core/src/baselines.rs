//! Classical detectors on the effective scalar channel.
//!
//! LS divides by the channel estimate, MMSE applies the scalar Wiener
//! equalizer, and ML searches the constellation exhaustively. A
//! Gauss-Markov corruption model with error fraction `rho` produces the
//! imperfect-CSI estimates the detectors receive.

use crate::channel::{
    effective_row_channel, Beamformer, ChannelError, ChannelRealization, NoiseModel, PhaseConfig,
};
use crate::modem::Constellation;
use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("channel estimate is zero; LS equalizer undefined")]
    ZeroChannel,
    #[error("CSI error fraction {0} outside [0, 1]")]
    InvalidErrorFraction(f64),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// The scalar channel a detector sees: cascaded gain and noise variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveChannel {
    pub gain: Complex64,
    pub noise_variance: f64,
}

/// Collapses (realization, phases, beamformer) to the effective scalar
/// channel `g = row * v`, carrying the noise variance along.
pub fn effective_channel(
    ch: &ChannelRealization,
    phases: &PhaseConfig,
    beam: &Beamformer,
    noise: &NoiseModel,
) -> Result<EffectiveChannel, BaselineError> {
    if beam.weights().len() != ch.n_antennas() {
        return Err(ChannelError::DimensionMismatch(format!(
            "beamformer length {} for {} antennas",
            beam.weights().len(),
            ch.n_antennas()
        ))
        .into());
    }
    let row = effective_row_channel(ch, phases);
    let gain = row.iter().zip(beam.weights()).map(|(r, w)| r * w).sum();
    Ok(EffectiveChannel {
        gain,
        noise_variance: noise.variance(),
    })
}

/// Receiver-side channel knowledge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CsiQuality {
    Perfect,
    Imperfect { error_fraction: f64 },
}

impl CsiQuality {
    /// `rho = 0` yields `Perfect`; `rho` outside `[0, 1]` is rejected.
    pub fn from_error_fraction(rho: f64) -> Result<Self, BaselineError> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(BaselineError::InvalidErrorFraction(rho));
        }
        if rho == 0.0 {
            Ok(CsiQuality::Perfect)
        } else {
            Ok(CsiQuality::Imperfect { error_fraction: rho })
        }
    }

    pub fn error_fraction(&self) -> f64 {
        match self {
            CsiQuality::Perfect => 0.0,
            CsiQuality::Imperfect { error_fraction } => *error_fraction,
        }
    }
}

/// Gauss-Markov CSI corruption:
/// `g_hat = sqrt(1 - rho) * g + sqrt(rho) * |g| * e`, `e ~ CN(0, 1)`.
///
/// Perfect CSI returns `g` exactly; at `rho = 1` the estimate carries no
/// phase information about `g`.
pub fn corrupt_csi(gain: Complex64, quality: &CsiQuality, rng: &mut ChaCha8Rng) -> Complex64 {
    let rho = quality.error_fraction();
    if rho == 0.0 {
        return gain;
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let re: f64 = rand_distr::StandardNormal.sample(rng);
    let im: f64 = rand_distr::StandardNormal.sample(rng);
    let error = Complex64::new(re * s, im * s);
    gain * (1.0 - rho).sqrt() + error * gain.norm() * rho.sqrt()
}

/// Least-squares equalizer output `y / g_hat`.
pub fn equalize_ls(sample: Complex64, gain_estimate: Complex64) -> Result<Complex64, BaselineError> {
    if gain_estimate.norm_sqr() == 0.0 {
        return Err(BaselineError::ZeroChannel);
    }
    Ok(sample / gain_estimate)
}

/// LS detection: equalize, then hard-demap to the nearest point index.
pub fn detect_ls(
    sample: Complex64,
    gain_estimate: Complex64,
    constellation: &Constellation,
) -> Result<usize, BaselineError> {
    Ok(constellation.nearest_point(equalize_ls(sample, gain_estimate)?))
}

/// Scalar Wiener equalizer output `conj(g_hat) * y / (|g_hat|^2 + sigma^2)`.
pub fn equalize_mmse(sample: Complex64, gain_estimate: Complex64, noise_variance: f64) -> Complex64 {
    assert!(noise_variance >= 0.0, "noise variance must be non-negative");
    let denom = gain_estimate.norm_sqr() + noise_variance;
    if denom == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    gain_estimate.conj() * sample / denom
}

/// MMSE detection: Wiener-equalize, then hard-demap.
pub fn detect_mmse(
    sample: Complex64,
    gain_estimate: Complex64,
    noise_variance: f64,
    constellation: &Constellation,
) -> usize {
    constellation.nearest_point(equalize_mmse(sample, gain_estimate, noise_variance))
}

/// Maximum-likelihood detection: exhaustive `argmin_s |y - g_hat * s|^2`,
/// ties broken by lowest point index.
pub fn detect_ml(
    sample: Complex64,
    gain_estimate: Complex64,
    constellation: &Constellation,
) -> usize {
    let mut best = 0;
    let mut best_metric = f64::INFINITY;
    for (i, point) in constellation.points().iter().enumerate() {
        let metric = (sample - gain_estimate * point).norm_sqr();
        if metric < best_metric {
            best_metric = metric;
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{
        cophase, mrt_beamformer, transmit, ChannelRealization, FadingModel, PhaseConfig,
    };
    use crate::channel::sample_channel;
    use crate::rng::{stream_rng, StreamPurpose};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn rng(i: u64) -> ChaCha8Rng {
        stream_rng(99, StreamPurpose::Scratch, i)
    }

    fn qpsk() -> Constellation {
        Constellation::qam(4).unwrap()
    }

    #[test]
    fn identity_cascade_has_unit_gain() {
        let ch = ChannelRealization::all_ones(1, 1, 1.0);
        let phases = PhaseConfig::zero(1);
        let beam = Beamformer::unit_entries(1);
        let eff = effective_channel(&ch, &phases, &beam, &NoiseModel::silent()).unwrap();
        assert_abs_diff_eq!(eff.gain.re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(eff.gain.im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn effective_channel_consistent_with_noiseless_transmit() {
        let mut r = rng(0);
        let ch = ChannelRealization::sample(6, 3, FadingModel::Rayleigh, 0.8, &mut r);
        let phases = PhaseConfig::uniform_random(6, &mut r);
        let beam = mrt_beamformer(&ch, &phases, 1.0).unwrap();
        let eff = effective_channel(&ch, &phases, &beam, &NoiseModel::silent()).unwrap();
        let x = Complex64::new(0.3, -0.4);
        let y = transmit(
            &ch,
            &phases,
            std::slice::from_ref(&beam),
            &[vec![x]],
            &NoiseModel::silent(),
            &mut r,
        )
        .unwrap();
        let ratio = y[0] / x;
        assert_abs_diff_eq!(ratio.re, eff.gain.re, epsilon = 1e-12);
        assert_abs_diff_eq!(ratio.im, eff.gain.im, epsilon = 1e-12);
    }

    #[test]
    fn cophased_single_antenna_gain_is_the_magnitude_sum() {
        let mut r = rng(1);
        let ch = ChannelRealization::sample(8, 1, FadingModel::Rayleigh, 1.0, &mut r);
        let beam = Beamformer::unit_entries(1);
        let phases = cophase(&ch, &beam);
        let eff = effective_channel(&ch, &phases, &beam, &NoiseModel::silent()).unwrap();
        let a: f64 = (0..8)
            .map(|i| ch.ris_destination[i].norm() * ch.source_ris[(i, 0)].norm())
            .sum();
        assert_abs_diff_eq!(eff.gain.norm(), a, epsilon = 1e-10);
    }

    #[test]
    fn perfect_csi_passes_through() {
        let g = Complex64::new(1.2, -0.7);
        let mut r = rng(2);
        let got = corrupt_csi(g, &CsiQuality::Perfect, &mut r);
        assert_eq!(got, g);
        assert_eq!(
            CsiQuality::from_error_fraction(0.0).unwrap(),
            CsiQuality::Perfect
        );
    }

    #[test]
    fn full_corruption_forgets_the_phase() {
        let quality = CsiQuality::from_error_fraction(1.0).unwrap();
        let mut r = rng(3);
        let n = 100_000;
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let g = sample_channel(1, 1, &FadingModel::Rayleigh, &mut r)[(0, 0)];
            let ghat = corrupt_csi(g, &quality, &mut r);
            let (x, y) = (g.arg(), ghat.arg());
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
        }
        let nf = n as f64;
        let cov = sxy / nf - (sx / nf) * (sy / nf);
        let vx = sxx / nf - (sx / nf) * (sx / nf);
        let vy = syy / nf - (sy / nf) * (sy / nf);
        let corr = cov / (vx * vy).sqrt();
        assert!(corr.abs() < 0.02, "phase correlation {corr} should vanish");
    }

    #[test]
    fn corruption_energy_matches_the_error_fraction() {
        let rho = 0.1;
        let quality = CsiQuality::from_error_fraction(rho).unwrap();
        let g = Complex64::new(0.8, 1.1);
        let mut r = rng(4);
        let n = 100_000;
        let mean_err: f64 = (0..n)
            .map(|_| {
                let ghat = corrupt_csi(g, &quality, &mut r);
                (ghat - g * (1.0 - rho).sqrt()).norm_sqr()
            })
            .sum::<f64>()
            / n as f64;
        assert_abs_diff_eq!(mean_err / g.norm_sqr(), rho, epsilon = 0.01);
    }

    #[test]
    fn invalid_error_fraction_is_rejected() {
        assert!(CsiQuality::from_error_fraction(-0.1).is_err());
        assert!(CsiQuality::from_error_fraction(1.5).is_err());
    }

    #[test]
    fn ls_recovers_noiseless_symbols() {
        let c = qpsk();
        let g = Complex64::new(0.4, -1.3);
        for (i, s) in c.points().iter().enumerate() {
            let y = g * s;
            assert_eq!(detect_ls(y, g, &c).unwrap(), i);
        }
        let y = Complex64::new(2.0, 0.0) * c.points()[2];
        assert_eq!(detect_ls(y, Complex64::new(2.0, 0.0), &c).unwrap(), 2);
    }

    #[test]
    fn ls_division_matches_hand_arithmetic() {
        let y = Complex64::new(1.0, 1.0);
        let g = Complex64::new(0.0, 2.0);
        // (1 + j) / 2j = (1 - j) / 2
        let x = equalize_ls(y, g).unwrap();
        assert_abs_diff_eq!(x.re, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(x.im, -0.5, epsilon = 1e-15);
        assert!(detect_ls(y, Complex64::new(0.0, 0.0), &qpsk()).is_err());
    }

    #[test]
    fn mmse_equals_ls_without_noise_and_shrinks_with_noise() {
        let c = qpsk();
        let mut r = rng(5);
        for _ in 0..200 {
            let g = sample_channel(1, 1, &FadingModel::Rayleigh, &mut r)[(0, 0)];
            let y = sample_channel(1, 1, &FadingModel::Rayleigh, &mut r)[(0, 0)];
            if g.norm_sqr() == 0.0 {
                continue;
            }
            assert_eq!(detect_mmse(y, g, 0.0, &c), detect_ls(y, g, &c).unwrap());
        }
        // sigma^2 -> infinity drives the pre-demap output to zero
        let out = equalize_mmse(Complex64::new(1.0, 1.0), Complex64::new(1.0, 0.0), 1e12);
        assert!(out.norm() < 1e-11);
    }

    #[test]
    fn mmse_matches_hand_arithmetic() {
        let y = Complex64::new(1.0, -1.0);
        let g = Complex64::new(2.0, 1.0);
        let sigma2 = 0.5;
        // conj(g) * y / (|g|^2 + sigma^2) = (2 - j)(1 - j) / 5.5 = (1 - 3j)/5.5
        let x = equalize_mmse(y, g, sigma2);
        assert_abs_diff_eq!(x.re, 1.0 / 5.5, epsilon = 1e-12);
        assert_abs_diff_eq!(x.im, -3.0 / 5.5, epsilon = 1e-12);
    }

    #[test]
    fn ml_is_the_exhaustive_minimizer() {
        let c = qpsk();
        let mut r = rng(6);
        for _ in 0..1000 {
            let g = sample_channel(1, 1, &FadingModel::Rayleigh, &mut r)[(0, 0)];
            let y = sample_channel(1, 1, &FadingModel::Rayleigh, &mut r)[(0, 0)];
            // independent re-implementation of the brute force
            let mut oracle = 0;
            let mut best = f64::INFINITY;
            for (i, p) in c.points().iter().enumerate() {
                let d = (y - g * p).norm_sqr();
                if d < best {
                    best = d;
                    oracle = i;
                }
            }
            assert_eq!(detect_ml(y, g, &c), oracle);
        }
        // noiseless: recovers the transmitted point
        let g = Complex64::new(-0.3, 0.9);
        for (i, s) in c.points().iter().enumerate() {
            assert_eq!(detect_ml(g * s, g, &c), i);
        }
    }

    #[test]
    fn ml_and_ls_agree_under_perfect_csi() {
        let c = qpsk();
        let mut r = rng(7);
        let noise = NoiseModel::new(0.5).unwrap();
        for _ in 0..100_000 {
            let g = sample_channel(1, 1, &FadingModel::Rayleigh, &mut r)[(0, 0)];
            if g.norm() < 1e-9 {
                continue;
            }
            let idx = r.random_range(0..4usize);
            let y = g * c.points()[idx] + noise.sample(&mut r);
            assert_eq!(detect_ls(y, g, &c).unwrap(), detect_ml(y, g, &c));
        }
    }

    #[test]
    fn decisions_survive_common_positive_scaling() {
        let c = qpsk();
        let mut r = rng(8);
        for _ in 0..2000 {
            let g = sample_channel(1, 1, &FadingModel::Rayleigh, &mut r)[(0, 0)];
            let y = sample_channel(1, 1, &FadingModel::Rayleigh, &mut r)[(0, 0)];
            if g.norm() < 1e-9 {
                continue;
            }
            let scale: f64 = r.random_range(0.1..10.0);
            let sigma2 = 0.3;
            assert_eq!(
                detect_ls(y, g, &c).unwrap(),
                detect_ls(y * scale, g * scale, &c).unwrap()
            );
            assert_eq!(detect_ml(y, g, &c), detect_ml(y * scale, g * scale, &c));
            assert_eq!(
                detect_mmse(y, g, sigma2, &c),
                detect_mmse(y * scale, g * scale, sigma2, &c)
            );
        }
    }
}
