//! Monte Carlo BER measurement and the multiply-count complexity report.
//!
//! Each SNR point simulates independent coherence frames (fresh channels,
//! fresh uniform RIS phases) and scores every requested detector on the
//! same frames, so detector comparisons are paired. Frames are produced
//! in fixed-size chunks on stream-addressed generators and merged in
//! chunk order: results are bit-identical for a given seed regardless of
//! thread count.

use crate::baselines::{corrupt_csi, detect_ls, detect_ml, detect_mmse, CsiQuality};
use crate::channel::FadingModel;
use crate::modem::{Bit, Constellation, ModemError};
use crate::neural::{forward, Mode, NeuralError};
use crate::training::{
    encode_features, simulate_frame, train, Checkpoint, Dataset, Frame, GenConfig, NormStats,
    TrainConfig, TrainError, TrainHistory,
};
use crate::rng::{eval_stream_index, stream_rng, StreamPurpose};
use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("detector '{0}' requires a trained model")]
    MissingModel(&'static str),
    #[error("scenario frame length {scenario} does not match the checkpoint frame length {model}")]
    FrameLengthMismatch { scenario: usize, model: usize },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("complexity report needs at least 4 node counts, got {0}")]
    TooFewLayers(usize),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Modem(#[from] ModemError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The detectors the benchmark can score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    /// The trained neural detector; needs a checkpoint.
    DeepRis,
    /// Least-squares equalizer with hard demapping.
    Ls,
    /// Scalar Wiener equalizer with hard demapping.
    Mmse,
    /// Exhaustive maximum-likelihood search.
    Ml,
    /// Returns the transmitted bits; lower bracket (BER 0).
    Genie,
    /// Returns coin-flip bits; upper bracket (BER 1/2).
    Chance,
}

impl DetectorKind {
    pub fn label(&self) -> &'static str {
        match self {
            DetectorKind::DeepRis => "deepris",
            DetectorKind::Ls => "ls",
            DetectorKind::Mmse => "mmse",
            DetectorKind::Ml => "ml",
            DetectorKind::Genie => "genie",
            DetectorKind::Chance => "chance",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "deepris" => Some(DetectorKind::DeepRis),
            "ls" => Some(DetectorKind::Ls),
            "mmse" => Some(DetectorKind::Mmse),
            "ml" => Some(DetectorKind::Ml),
            "genie" => Some(DetectorKind::Genie),
            "chance" => Some(DetectorKind::Chance),
            _ => None,
        }
    }
}

/// One evaluation condition: link geometry, fading law, CSI quality, and
/// the SNR grid to sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub label: String,
    pub csi: CsiQuality,
    pub fading: FadingModel,
    pub ris_elements: usize,
    pub tx_antennas: usize,
    pub frame_len: usize,
    pub snr_grid_db: Vec<f64>,
    pub detectors: Vec<DetectorKind>,
    pub pathloss_gain: f64,
    pub power_budget: f64,
    /// Degenerate all-ones channels; pinned-channel oracles use this.
    pub unit_channels: bool,
}

impl Scenario {
    fn validate(&self) -> Result<(), EvalError> {
        if self.ris_elements == 0 || self.tx_antennas == 0 || self.frame_len == 0 {
            return Err(EvalError::InvalidScenario(format!(
                "{}: dimensions must be positive",
                self.label
            )));
        }
        if self.snr_grid_db.is_empty() || self.snr_grid_db.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::InvalidScenario(format!(
                "{}: SNR grid must be strictly increasing",
                self.label
            )));
        }
        if self.detectors.is_empty() {
            return Err(EvalError::InvalidScenario(format!(
                "{}: no detectors requested",
                self.label
            )));
        }
        Ok(())
    }

    fn gen_config(&self, modulation_order: usize) -> GenConfig {
        GenConfig {
            ris_elements: self.ris_elements,
            tx_antennas: self.tx_antennas,
            frame_len: self.frame_len,
            modulation_order,
            snr_min_db: 0.0,
            snr_max_db: 0.0,
            fading: self.fading,
            pathloss_gain: self.pathloss_gain,
            power_budget: self.power_budget,
            unit_channels: self.unit_channels,
        }
    }

    /// Parses one scenario-file line of whitespace-separated `key=value`
    /// tokens, e.g.
    /// `label=a csi=perfect fading=rayleigh n=16 m=4 frame_len=16 snr_db=10,15,20 detectors=ml,deepris`.
    /// `csi` takes `perfect` or `imperfect:<rho>`; `fading` takes
    /// `rayleigh` or `nakagami:<m>:<omega>`.
    pub fn parse_line(line: &str) -> Result<Self, EvalError> {
        let bad = |msg: String| EvalError::InvalidScenario(msg);
        let mut scenario = Scenario {
            label: String::new(),
            csi: CsiQuality::Perfect,
            fading: FadingModel::Rayleigh,
            ris_elements: 0,
            tx_antennas: 0,
            frame_len: 0,
            snr_grid_db: Vec::new(),
            detectors: Vec::new(),
            pathloss_gain: 1.0,
            power_budget: 1.0,
            unit_channels: false,
        };
        for token in line.split_whitespace() {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| bad(format!("token '{token}' is not key=value")))?;
            match key {
                "label" => scenario.label = value.to_string(),
                "csi" => {
                    scenario.csi = if value == "perfect" {
                        CsiQuality::Perfect
                    } else if let Some(rho) = value.strip_prefix("imperfect:") {
                        let rho: f64 = rho
                            .parse()
                            .map_err(|_| bad(format!("bad csi fraction '{rho}'")))?;
                        CsiQuality::from_error_fraction(rho)
                            .map_err(|e| bad(e.to_string()))?
                    } else {
                        return Err(bad(format!("bad csi spec '{value}'")));
                    }
                }
                "fading" => {
                    scenario.fading = if value == "rayleigh" {
                        FadingModel::Rayleigh
                    } else if let Some(rest) = value.strip_prefix("nakagami:") {
                        let (m, omega) = rest
                            .split_once(':')
                            .ok_or_else(|| bad(format!("bad fading spec '{value}'")))?;
                        let m: f64 = m.parse().map_err(|_| bad(format!("bad m '{m}'")))?;
                        let omega: f64 = omega
                            .parse()
                            .map_err(|_| bad(format!("bad omega '{omega}'")))?;
                        FadingModel::nakagami(m, omega).map_err(|e| bad(e.to_string()))?
                    } else {
                        return Err(bad(format!("bad fading spec '{value}'")));
                    }
                }
                "n" => {
                    scenario.ris_elements =
                        value.parse().map_err(|_| bad(format!("bad n '{value}'")))?
                }
                "m" => {
                    scenario.tx_antennas =
                        value.parse().map_err(|_| bad(format!("bad m '{value}'")))?
                }
                "frame_len" => {
                    scenario.frame_len = value
                        .parse()
                        .map_err(|_| bad(format!("bad frame_len '{value}'")))?
                }
                "snr_db" => {
                    scenario.snr_grid_db = value
                        .split(',')
                        .map(|s| s.trim().parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad(format!("bad snr_db list '{value}'")))?
                }
                "detectors" => {
                    scenario.detectors = value
                        .split(',')
                        .map(|s| {
                            DetectorKind::parse(s.trim())
                                .ok_or_else(|| bad(format!("unknown detector '{s}'")))
                        })
                        .collect::<Result<_, _>>()?
                }
                "pathloss_gain" => {
                    scenario.pathloss_gain = value
                        .parse()
                        .map_err(|_| bad(format!("bad pathloss_gain '{value}'")))?
                }
                "power_budget" => {
                    scenario.power_budget = value
                        .parse()
                        .map_err(|_| bad(format!("bad power_budget '{value}'")))?
                }
                "unit_channels" => {
                    scenario.unit_channels = value
                        .parse()
                        .map_err(|_| bad(format!("bad unit_channels '{value}'")))?
                }
                _ => return Err(bad(format!("unknown scenario key '{key}'"))),
            }
        }
        if scenario.label.is_empty() {
            return Err(bad("scenario needs a label".into()));
        }
        scenario.validate()?;
        Ok(scenario)
    }
}

/// Parses a scenario file: one scenario per non-comment line.
pub fn parse_scenario_file(text: &str) -> Result<Vec<Scenario>, EvalError> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(Scenario::parse_line)
        .collect()
}

/// When to stop accumulating frames at one SNR point: both floors met, or
/// the bit cap reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopRule {
    pub min_bits: u64,
    pub min_errors: u64,
    pub max_bits: u64,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            min_bits: 100_000,
            min_errors: 100,
            max_bits: 10_000_000,
        }
    }
}

/// One measured SNR point.
#[derive(Debug, Clone, PartialEq)]
pub struct BerPoint {
    pub snr_db: f64,
    pub bits: u64,
    pub errors: u64,
    pub ber: f64,
    /// Normal-approximation 95% binomial half-width.
    pub ci95: f64,
}

impl BerPoint {
    fn new(snr_db: f64, bits: u64, errors: u64) -> Self {
        let ber = errors as f64 / bits as f64;
        let ci95 = 1.96 * (ber * (1.0 - ber) / bits as f64).sqrt();
        Self {
            snr_db,
            bits,
            errors,
            ber,
            ci95,
        }
    }

    /// Whether the 95% intervals of two points overlap.
    pub fn overlaps(&self, other: &BerPoint) -> bool {
        (self.ber - other.ber).abs() <= self.ci95 + other.ci95
    }
}

/// A detector's BER across one scenario's SNR grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BerCurve {
    pub scenario: String,
    pub detector: String,
    pub seed: u64,
    pub points: Vec<BerPoint>,
}

/// The trained detector, unpacked for inference.
#[derive(Debug, Clone)]
pub struct DeepRisDetector {
    params: crate::neural::MlpParams,
    norm: NormStats,
    constellation: Constellation,
    frame_len: usize,
}

impl DeepRisDetector {
    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self, EvalError> {
        let constellation = Constellation::qam(checkpoint.modulation_order)?;
        Ok(Self {
            params: checkpoint.params.clone(),
            norm: checkpoint.norm.clone(),
            constellation,
            frame_len: checkpoint.frame_len,
        })
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn constellation(&self) -> &Constellation {
        &self.constellation
    }

    /// Detects the bits of one received frame.
    pub fn detect_frame(&self, received: &[num_complex::Complex64]) -> Result<Vec<Bit>, EvalError> {
        if received.len() != self.frame_len {
            return Err(EvalError::FrameLengthMismatch {
                scenario: received.len(),
                model: self.frame_len,
            });
        }
        let mut features = Array2::zeros((1, 2 * self.frame_len));
        encode_features(received, features.row_mut(0).as_slice_mut().unwrap());
        let bits = self.detect_feature_rows(features)?;
        Ok(bits.into_iter().next().unwrap())
    }

    /// Normalizes raw feature rows, runs the network, and hard-demaps each
    /// output row to bits.
    fn detect_feature_rows(&self, mut features: Array2<f64>) -> Result<Vec<Vec<Bit>>, EvalError> {
        self.norm.apply_matrix(&mut features);
        let (outputs, _) = forward(&self.params, features.view(), Mode::Infer)?;
        let mut decisions = Vec::with_capacity(outputs.nrows());
        for row in outputs.outer_iter() {
            let symbols = crate::training::decode_features(row);
            decisions.push(self.constellation.demodulate_hard(&symbols));
        }
        Ok(decisions)
    }
}

fn hamming(a: &[Bit], b: &[Bit]) -> u64 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u64
}

/// Frames per simulation chunk; chunks are the parallel work unit.
const CHUNK_FRAMES: usize = 256;
/// Chunks launched per wave before the stop rule is re-evaluated.
const WAVE_CHUNKS: usize = 8;

struct ChunkResult {
    bits: u64,
    errors: Vec<u64>,
}

fn run_chunk(
    kinds: &[DetectorKind],
    gen: &GenConfig,
    csi: &CsiQuality,
    sigma2: f64,
    model: Option<&DeepRisDetector>,
    constellation: &Constellation,
    seed: u64,
    scenario_idx: u64,
    point_idx: u64,
    chunk_idx: u64,
) -> Result<ChunkResult, EvalError> {
    let mut rng = stream_rng(
        seed,
        StreamPurpose::Eval,
        eval_stream_index(scenario_idx, point_idx, chunk_idx),
    );
    // phase 1: frames. phase 2: CSI estimates. phase 3: chance bits.
    // Keeping the phases separate means the frame stream is identical no
    // matter which detectors are requested.
    let frames: Vec<Frame> = (0..CHUNK_FRAMES)
        .map(|_| simulate_frame(gen, constellation, sigma2, &mut rng))
        .collect::<Result<_, _>>()?;
    let estimates: Vec<num_complex::Complex64> = frames
        .iter()
        .map(|f| corrupt_csi(f.gain, csi, &mut rng))
        .collect();

    let mut errors = vec![0u64; kinds.len()];
    let mut bits = 0u64;
    for f in &frames {
        bits += f.bits.len() as u64;
    }

    // batched neural inference over the whole chunk
    let deepris_decisions: Option<Vec<Vec<Bit>>> = if kinds
        .iter()
        .any(|k| matches!(k, DetectorKind::DeepRis))
    {
        let m = model.expect("checked by caller");
        let mut features = Array2::zeros((frames.len(), 2 * gen.frame_len));
        for (i, f) in frames.iter().enumerate() {
            encode_features(&f.received, features.row_mut(i).as_slice_mut().unwrap());
        }
        Some(m.detect_feature_rows(features)?)
    } else {
        None
    };

    let bps = constellation.bits_per_symbol();
    let mut decided = vec![0u8; 0];
    for (fi, frame) in frames.iter().enumerate() {
        let ghat = estimates[fi];
        for (ki, kind) in kinds.iter().enumerate() {
            match kind {
                DetectorKind::Genie => {}
                DetectorKind::Chance => {}
                DetectorKind::DeepRis => {
                    let decisions = &deepris_decisions.as_ref().unwrap()[fi];
                    errors[ki] += hamming(decisions, &frame.bits);
                }
                DetectorKind::Ls | DetectorKind::Mmse | DetectorKind::Ml => {
                    decided.clear();
                    decided.resize(bps, 0);
                    for (si, &y) in frame.received.iter().enumerate() {
                        let idx = match kind {
                            DetectorKind::Ls => match detect_ls(y, ghat, constellation) {
                                Ok(i) => i,
                                // an exactly-zero estimate carries no
                                // information; fall back to the tie rule
                                Err(_) => constellation.nearest_point(y * 0.0),
                            },
                            DetectorKind::Mmse => detect_mmse(y, ghat, sigma2, constellation),
                            DetectorKind::Ml => detect_ml(y, ghat, constellation),
                            _ => unreachable!(),
                        };
                        constellation.index_bits(idx, &mut decided);
                        errors[ki] += hamming(&decided, &frame.bits[si * bps..(si + 1) * bps]);
                    }
                }
            }
        }
    }
    // chance draws come last so their presence cannot perturb the frames
    if let Some(ki) = kinds
        .iter()
        .position(|k| matches!(k, DetectorKind::Chance))
    {
        for frame in &frames {
            for &bit in &frame.bits {
                let guess: u8 = rng.random_range(0..2);
                if guess != bit {
                    errors[ki] += 1;
                }
            }
        }
    }
    Ok(ChunkResult { bits, errors })
}

/// Measures every requested detector on shared frames across the
/// scenario's SNR grid. Returns one curve per detector, in the order
/// requested.
pub fn measure_ber_multi(
    kinds: &[DetectorKind],
    scenario: &Scenario,
    model: Option<&DeepRisDetector>,
    stop: &StopRule,
    seed: u64,
) -> Result<Vec<BerCurve>, EvalError> {
    scenario.validate()?;
    let needs_model = kinds.iter().any(|k| matches!(k, DetectorKind::DeepRis));
    let modulation_order = match (needs_model, model) {
        (true, None) => return Err(EvalError::MissingModel(DetectorKind::DeepRis.label())),
        (true, Some(m)) => {
            if m.frame_len() != scenario.frame_len {
                return Err(EvalError::FrameLengthMismatch {
                    scenario: scenario.frame_len,
                    model: m.frame_len(),
                });
            }
            m.constellation().order()
        }
        (false, _) => 4,
    };
    let constellation = Constellation::qam(modulation_order)?;
    let gen = scenario.gen_config(modulation_order);
    let scenario_idx = crate::config::fnv1a64(scenario.label.as_bytes()) & 0xFFF;

    let mut curves: Vec<BerCurve> = kinds
        .iter()
        .map(|k| BerCurve {
            scenario: scenario.label.clone(),
            detector: k.label().to_string(),
            seed,
            points: Vec::new(),
        })
        .collect();

    for (point_idx, &snr_db) in scenario.snr_grid_db.iter().enumerate() {
        let sigma2 = gen.noise_variance_for_snr(snr_db);
        let mut bits = 0u64;
        let mut errors = vec![0u64; kinds.len()];
        let mut next_chunk = 0u64;
        loop {
            let wave: Vec<ChunkResult> = (0..WAVE_CHUNKS as u64)
                .into_par_iter()
                .map(|w| {
                    run_chunk(
                        kinds,
                        &gen,
                        &scenario.csi,
                        sigma2,
                        model,
                        &constellation,
                        seed,
                        scenario_idx,
                        point_idx as u64,
                        next_chunk + w,
                    )
                })
                .collect::<Result<_, _>>()?;
            next_chunk += WAVE_CHUNKS as u64;
            for c in wave {
                bits += c.bits;
                for (e, add) in errors.iter_mut().zip(&c.errors) {
                    *e += add;
                }
            }
            let floors_met =
                bits >= stop.min_bits && errors.iter().all(|&e| e >= stop.min_errors);
            if floors_met || bits >= stop.max_bits {
                break;
            }
        }
        for (curve, &e) in curves.iter_mut().zip(&errors) {
            curve.points.push(BerPoint::new(snr_db, bits, e));
        }
    }
    Ok(curves)
}

/// Measures a single detector; see [`measure_ber_multi`].
pub fn measure_ber(
    kind: DetectorKind,
    scenario: &Scenario,
    model: Option<&DeepRisDetector>,
    stop: &StopRule,
    seed: u64,
) -> Result<BerCurve, EvalError> {
    Ok(measure_ber_multi(&[kind], scenario, model, stop, seed)?
        .into_iter()
        .next()
        .unwrap())
}

/// Runs every scenario in order, scoring each scenario's detector set on
/// shared frames. Labels must be unique: they address the random streams.
pub fn run_scenario_suite(
    model: &DeepRisDetector,
    scenarios: &[Scenario],
    stop: &StopRule,
    seed: u64,
) -> Result<Vec<BerCurve>, EvalError> {
    for (i, a) in scenarios.iter().enumerate() {
        for b in &scenarios[i + 1..] {
            if a.label == b.label {
                return Err(EvalError::InvalidScenario(format!(
                    "duplicate scenario label '{}'",
                    a.label
                )));
            }
        }
    }
    let mut curves = Vec::new();
    for scenario in scenarios {
        curves.extend(measure_ber_multi(
            &scenario.detectors,
            scenario,
            Some(model),
            stop,
            seed,
        )?);
    }
    Ok(curves)
}

/// The standard four-condition benchmark derived from a run configuration:
/// matched Rayleigh with perfect CSI, imperfect CSI, a Nakagami spread
/// mismatch, and element-count mismatches at half and double the trained
/// surface size.
pub fn fig2_scenarios(cfg: &crate::config::RunConfig) -> Vec<Scenario> {
    let detectors = vec![
        DetectorKind::Ml,
        DetectorKind::DeepRis,
        DetectorKind::Mmse,
        DetectorKind::Ls,
    ];
    let base = Scenario {
        label: String::new(),
        csi: CsiQuality::Perfect,
        fading: FadingModel::Rayleigh,
        ris_elements: cfg.ris_elements,
        tx_antennas: cfg.tx_antennas,
        frame_len: cfg.frame_len,
        snr_grid_db: cfg.eval_snr_db.clone(),
        detectors,
        pathloss_gain: cfg.pathloss_gain(),
        power_budget: cfg.power_budget,
        unit_channels: false,
    };
    let mismatch_fading = FadingModel::nakagami(1.0, 2.0).expect("fixed mismatch parameters");
    vec![
        Scenario {
            label: "fig2a_perfect_csi".into(),
            ..base.clone()
        },
        Scenario {
            label: "fig2b_imperfect_csi".into(),
            csi: cfg.csi_quality(),
            ..base.clone()
        },
        Scenario {
            label: "fig2c_channel_mismatch".into(),
            fading: mismatch_fading,
            ..base.clone()
        },
        Scenario {
            label: "fig2d_n_half".into(),
            ris_elements: (cfg.ris_elements / 2).max(1),
            ..base.clone()
        },
        Scenario {
            label: "fig2d_n_double".into(),
            ris_elements: cfg.ris_elements * 2,
            ..base
        },
    ]
}

// ---------------------------------------------------------------------------
// Complexity report
// ---------------------------------------------------------------------------

/// Exact multiply counts of the dense network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplexityReport {
    /// Node counts per layer, input layer excluded.
    pub node_counts: Vec<u64>,
    /// One forward pass: sum of consecutive node-count products.
    pub inference_multiplies: u128,
    /// `iterations * samples * inference_multiplies`.
    pub training_multiplies: u128,
}

/// Multiply counts from the layer node counts (input layer ignored), the
/// iteration count, and the number of training samples.
pub fn complexity_report(
    node_counts: &[u64],
    iterations: u64,
    samples: u64,
) -> Result<ComplexityReport, EvalError> {
    if node_counts.len() < 4 {
        return Err(EvalError::TooFewLayers(node_counts.len()));
    }
    let inference: u128 = node_counts
        .windows(2)
        .map(|w| w[0] as u128 * w[1] as u128)
        .sum();
    Ok(ComplexityReport {
        node_counts: node_counts.to_vec(),
        inference_multiplies: inference,
        training_multiplies: iterations as u128 * samples as u128 * inference,
    })
}

// ---------------------------------------------------------------------------
// Learning-rate study
// ---------------------------------------------------------------------------

/// Trains one model per learning rate on identically seeded data and
/// returns the loss histories for comparison.
pub fn learning_rate_study(
    dataset: &Dataset,
    learning_rates: &[f64],
    base: &TrainConfig,
) -> Result<Vec<(f64, TrainHistory)>, TrainError> {
    let mut out = Vec::with_capacity(learning_rates.len());
    for &eta in learning_rates {
        if !(eta > 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "learning rate {eta} must be positive"
            )));
        }
        let cfg = TrainConfig {
            learning_rate: eta,
            ..base.clone()
        };
        let (_, _, history) = train(dataset, &cfg)?;
        out.push((eta, history));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

/// Renders curves to the results CSV: provenance comments, a fixed
/// header, then one row per (curve, SNR point). Floats print in plain
/// decimal with shortest round-trip precision.
pub fn render_csv(curves: &[BerCurve], config_digest: u64, seed: u64) -> String {
    let mut text = String::new();
    let _ = writeln!(text, "# deepris ber results");
    let _ = writeln!(text, "# config_digest={config_digest:016x}");
    let _ = writeln!(text, "# seed={seed}");
    let _ = writeln!(text, "scenario,detector,snr_db,bits,errors,ber,ci95,seed");
    for curve in curves {
        for p in &curve.points {
            let _ = writeln!(
                text,
                "{},{},{},{},{},{},{},{}",
                curve.scenario, curve.detector, p.snr_db, p.bits, p.errors, p.ber, p.ci95, curve.seed
            );
        }
    }
    text
}

/// Writes the results CSV atomically.
pub fn write_csv(
    curves: &[BerCurve],
    path: &Path,
    config_digest: u64,
    seed: u64,
) -> Result<(), EvalError> {
    crate::config::write_atomic(path, render_csv(curves, config_digest, seed).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::generate_dataset;
    use approx::assert_abs_diff_eq;
    use statrs::function::erf::erfc;

    fn pinned_unit_scenario(detectors: Vec<DetectorKind>, snr_grid_db: Vec<f64>) -> Scenario {
        Scenario {
            label: "pinned_unit".into(),
            csi: CsiQuality::Perfect,
            fading: FadingModel::Rayleigh,
            ris_elements: 1,
            tx_antennas: 1,
            frame_len: 8,
            snr_grid_db,
            detectors,
            pathloss_gain: 1.0,
            power_budget: 1.0,
            unit_channels: true,
        }
    }

    fn q_function(x: f64) -> f64 {
        0.5 * erfc(x / std::f64::consts::SQRT_2)
    }

    #[test]
    fn complexity_matches_the_closed_form() {
        let r = complexity_report(&[500, 250, 100, 2], 1, 1).unwrap();
        assert_eq!(r.inference_multiplies, 150_200);
        assert_eq!(r.training_multiplies, 150_200);
        let r2 = complexity_report(&[500, 250, 100, 2], 7, 13).unwrap();
        assert_eq!(r2.training_multiplies, 7 * 13 * 150_200);
        let r3 = complexity_report(&[500, 250, 100, 2], 7, 26).unwrap();
        assert_eq!(r3.training_multiplies, 2 * r2.training_multiplies);
        assert!(matches!(
            complexity_report(&[10, 10, 10], 1, 1),
            Err(EvalError::TooFewLayers(3))
        ));
    }

    #[test]
    fn genie_is_perfect_and_chance_is_half() {
        let sc = pinned_unit_scenario(
            vec![DetectorKind::Genie, DetectorKind::Chance],
            vec![0.0, 10.0],
        );
        let stop = StopRule {
            min_bits: 20_000,
            min_errors: 1,
            max_bits: 50_000,
        };
        let curves = measure_ber_multi(&sc.detectors, &sc, None, &stop, 5).unwrap();
        for p in &curves[0].points {
            assert_eq!(p.errors, 0);
            assert_eq!(p.ber, 0.0);
        }
        for p in &curves[1].points {
            assert_abs_diff_eq!(p.ber, 0.5, epsilon = 3.0 * p.ci95 / 1.96);
        }
    }

    #[test]
    fn ml_on_pinned_unit_channel_matches_the_analytic_curve() {
        // desk-size version of the acceptance check: gamma = 6 dB
        let sc = pinned_unit_scenario(vec![DetectorKind::Ml], vec![6.0]);
        let stop = StopRule {
            min_bits: 400_000,
            min_errors: 100,
            max_bits: 600_000,
        };
        let curve = measure_ber(DetectorKind::Ml, &sc, None, &stop, 6).unwrap();
        let want = q_function(10f64.powf(0.6 / 2.0));
        let got = curve.points[0].ber;
        assert!(
            (got - want).abs() < 0.15 * want,
            "measured {got}, analytic {want}"
        );
    }

    #[test]
    fn ber_equals_errors_over_bits_and_runs_reproduce() {
        let sc = pinned_unit_scenario(vec![DetectorKind::Ml, DetectorKind::Ls], vec![0.0, 4.0]);
        let stop = StopRule {
            min_bits: 30_000,
            min_errors: 10,
            max_bits: 60_000,
        };
        let a = measure_ber_multi(&sc.detectors, &sc, None, &stop, 7).unwrap();
        let b = measure_ber_multi(&sc.detectors, &sc, None, &stop, 7).unwrap();
        assert_eq!(a, b);
        for curve in &a {
            for p in &curve.points {
                assert_eq!(p.ber, p.errors as f64 / p.bits as f64);
            }
        }
        let c = measure_ber_multi(&sc.detectors, &sc, None, &stop, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn ber_is_monotone_in_snr_within_confidence() {
        let sc = pinned_unit_scenario(vec![DetectorKind::Ml], vec![0.0, 4.0, 8.0]);
        let stop = StopRule {
            min_bits: 100_000,
            min_errors: 50,
            max_bits: 400_000,
        };
        let curve = measure_ber(DetectorKind::Ml, &sc, None, &stop, 9).unwrap();
        for pair in curve.points.windows(2) {
            assert!(
                pair[1].ber <= pair[0].ber + pair[0].ci95 + pair[1].ci95,
                "BER rose from {} to {} between {} and {} dB",
                pair[0].ber,
                pair[1].ber,
                pair[0].snr_db,
                pair[1].snr_db
            );
        }
    }

    #[test]
    fn brackets_hold_on_a_fading_scenario() {
        let sc = Scenario {
            label: "bracket".into(),
            unit_channels: false,
            ris_elements: 4,
            tx_antennas: 2,
            ..pinned_unit_scenario(
                vec![DetectorKind::Genie, DetectorKind::Ml, DetectorKind::Chance],
                vec![8.0],
            )
        };
        let stop = StopRule {
            min_bits: 30_000,
            min_errors: 5,
            max_bits: 60_000,
        };
        let curves = measure_ber_multi(&sc.detectors, &sc, None, &stop, 10).unwrap();
        let genie = &curves[0].points[0];
        let ml = &curves[1].points[0];
        let chance = &curves[2].points[0];
        assert!(genie.ber <= ml.ber && ml.ber <= chance.ber);
    }

    #[test]
    fn deepris_requires_a_model_and_matching_frame_length() {
        let sc = pinned_unit_scenario(vec![DetectorKind::DeepRis], vec![0.0]);
        let stop = StopRule::default();
        assert!(matches!(
            measure_ber_multi(&sc.detectors, &sc, None, &stop, 0),
            Err(EvalError::MissingModel(_))
        ));
    }

    #[test]
    fn trained_detector_recovers_noiseless_identity_frames() {
        let gen = GenConfig::noiseless_identity(4);
        let data = generate_dataset(&gen, 400, 31).unwrap();
        let cfg = TrainConfig {
            batch_size: 16,
            max_epochs: 25,
            patience: 10,
            hidden_dims: vec![32, 16],
            dropout: 0.1,
            seed: 31,
            ..TrainConfig::default()
        };
        let (params, norm, _) = train(&data, &cfg).unwrap();
        let checkpoint = Checkpoint {
            params,
            norm,
            modulation_order: 4,
            frame_len: 4,
            train_config: cfg,
            gen_digest: 0,
        };
        let detector = DeepRisDetector::from_checkpoint(&checkpoint).unwrap();
        let constellation = Constellation::qam(4).unwrap();
        let mut rng = stream_rng(77, StreamPurpose::Scratch, 3);
        let frame = simulate_frame(&gen, &constellation, 0.0, &mut rng).unwrap();
        let decided = detector.detect_frame(&frame.received).unwrap();
        assert_eq!(decided, frame.bits);
        // frame-length mismatch is rejected
        assert!(matches!(
            detector.detect_frame(&frame.received[..2]),
            Err(EvalError::FrameLengthMismatch { .. })
        ));
    }

    #[test]
    fn empty_scenario_list_yields_no_curves() {
        let gen = GenConfig::noiseless_identity(2);
        let data = generate_dataset(&gen, 200, 32).unwrap();
        let cfg = TrainConfig {
            batch_size: 16,
            max_epochs: 2,
            patience: 2,
            hidden_dims: vec![8],
            dropout: 0.0,
            seed: 1,
            ..TrainConfig::default()
        };
        let (params, norm, _) = train(&data, &cfg).unwrap();
        let checkpoint = Checkpoint {
            params,
            norm,
            modulation_order: 4,
            frame_len: 2,
            train_config: cfg,
            gen_digest: 0,
        };
        let detector = DeepRisDetector::from_checkpoint(&checkpoint).unwrap();
        let curves = run_scenario_suite(&detector, &[], &StopRule::default(), 0).unwrap();
        assert!(curves.is_empty());
    }

    #[test]
    fn scenario_lines_parse_and_reject_garbage() {
        let sc = Scenario::parse_line(
            "label=a csi=imperfect:0.2 fading=nakagami:1:2 n=8 m=2 frame_len=4 snr_db=0,10 detectors=ml,ls",
        )
        .unwrap();
        assert_eq!(sc.label, "a");
        assert_eq!(sc.csi.error_fraction(), 0.2);
        assert_eq!(sc.ris_elements, 8);
        assert_eq!(sc.detectors.len(), 2);
        assert!(Scenario::parse_line("label=x csi=psychic n=1 m=1").is_err());
        assert!(Scenario::parse_line("csi=perfect").is_err());
        let file = "# comment\nlabel=a csi=perfect fading=rayleigh n=1 m=1 frame_len=2 snr_db=0,5 detectors=ml\n";
        assert_eq!(parse_scenario_file(file).unwrap().len(), 1);
    }

    #[test]
    fn fig2_suite_has_the_expected_shape() {
        let mut cfg = crate::config::RunConfig::default();
        cfg.apply_desk_preset();
        let scenarios = fig2_scenarios(&cfg);
        assert_eq!(scenarios.len(), 5);
        assert_eq!(scenarios[0].label, "fig2a_perfect_csi");
        assert_eq!(scenarios[1].csi.error_fraction(), 0.1);
        assert_eq!(
            scenarios[2].fading,
            FadingModel::nakagami(1.0, 2.0).unwrap()
        );
        assert_eq!(scenarios[3].ris_elements, 8);
        assert_eq!(scenarios[4].ris_elements, 32);
        for s in &scenarios {
            assert_eq!(s.detectors.len(), 4);
        }
    }

    #[test]
    fn csv_rendering_is_consistent() {
        let curves = vec![BerCurve {
            scenario: "s".into(),
            detector: "ml".into(),
            seed: 3,
            points: vec![
                BerPoint::new(0.0, 1000, 17),
                BerPoint::new(5.0, 1000, 5),
                BerPoint::new(10.0, 1000, 1),
            ],
        }];
        let text = render_csv(&curves, 0xABCD, 3);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3 + 1 + 3);
        assert_eq!(lines[3], "scenario,detector,snr_db,bits,errors,ber,ci95,seed");
        assert!(lines[1].contains("000000000000abcd"));
        for row in &lines[4..] {
            let cols: Vec<&str> = row.split(',').collect();
            assert_eq!(cols.len(), 8);
            let bits: f64 = cols[3].parse().unwrap();
            let errors: f64 = cols[4].parse().unwrap();
            let ber: f64 = cols[5].parse().unwrap();
            assert_abs_diff_eq!(ber, errors / bits, epsilon = 1e-15);
            assert!(!cols[5].contains('e'), "plain decimal expected: {}", cols[5]);
        }
        let empty = render_csv(&[], 1, 1);
        assert_eq!(empty.lines().count(), 4);
    }
}
