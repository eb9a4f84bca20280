//! Python bindings exposing the simulator's main types and operations:
//! the constellation, channel statistics, dataset synthesis, detector
//! training, checkpoint save/load, BER measurement, and the complexity
//! report.

use deepris::channel::{self, FadingModel};
use deepris::eval::{self, DeepRisDetector, DetectorKind, Scenario, StopRule};
use deepris::modem;
use deepris::rng::{stream_rng, StreamPurpose};
use deepris::training::{self, Checkpoint, GenConfig, TrainConfig, TrainHistory};
use num_complex::Complex64;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use std::path::PathBuf;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A unit-energy Gray-labeled square-QAM constellation.
#[pyclass]
#[derive(Clone)]
struct Constellation {
    inner: modem::Constellation,
}

#[pymethods]
impl Constellation {
    /// Builds the constellation for `order` (only 4 is supported).
    #[staticmethod]
    fn qam(order: usize) -> PyResult<Self> {
        Ok(Self {
            inner: modem::Constellation::qam(order).map_err(value_err)?,
        })
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.order()
    }

    #[getter]
    fn bits_per_symbol(&self) -> usize {
        self.inner.bits_per_symbol()
    }

    #[getter]
    fn amplitude_bound(&self) -> f64 {
        self.inner.amplitude_bound()
    }

    fn points(&self) -> Vec<Complex64> {
        self.inner.points().to_vec()
    }

    /// Maps bits (0/1 integers) to complex symbols.
    fn modulate(&self, bits: Vec<u8>) -> PyResult<Vec<Complex64>> {
        self.inner.modulate(&bits).map_err(value_err)
    }

    /// Hard-demaps complex samples back to bits.
    fn demodulate_hard(&self, samples: Vec<Complex64>) -> Vec<u8> {
        self.inner.demodulate_hard(&samples)
    }
}

/// Distance pathloss as a power gain.
#[pyfunction]
fn pathloss(distance: f64) -> PyResult<f64> {
    channel::pathloss(distance).map_err(value_err)
}

/// Closed-form mean and variance of the co-phased cascade gain.
#[pyfunction]
fn gain_moments(n_elements: usize) -> (f64, f64) {
    channel::gain_moments(n_elements)
}

/// Monte Carlo draws of the co-phased cascade gain for one-antenna links.
#[pyfunction]
fn cophased_gain_samples(n_elements: usize, trials: usize, seed: u64) -> Vec<f64> {
    (0..trials)
        .map(|t| {
            let mut rng = stream_rng(seed, StreamPurpose::Scratch, t as u64);
            let ch = channel::ChannelRealization::sample(
                n_elements,
                1,
                FadingModel::Rayleigh,
                1.0,
                &mut rng,
            );
            let beam = channel::Beamformer::unit_entries(1);
            let phases = channel::cophase(&ch, &beam);
            channel::effective_row_channel(&ch, &phases)[0].norm()
        })
        .collect()
}

/// Exact multiply counts: `(inference, training)` for the given layer
/// node counts, iteration count, and sample count.
#[pyfunction]
fn complexity_report(node_counts: Vec<u64>, iterations: u64, samples: u64) -> PyResult<(u128, u128)> {
    let r = eval::complexity_report(&node_counts, iterations, samples).map_err(value_err)?;
    Ok((r.inference_multiplies, r.training_multiplies))
}

fn build_fading(nakagami: Option<(f64, f64)>) -> PyResult<FadingModel> {
    match nakagami {
        None => Ok(FadingModel::Rayleigh),
        Some((m, omega)) => FadingModel::nakagami(m, omega).map_err(value_err),
    }
}

/// Synthesized training frames.
#[pyclass]
struct Dataset {
    inner: training::Dataset,
}

#[pymethods]
impl Dataset {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    #[getter]
    fn frame_len(&self) -> usize {
        self.inner.meta.frame_len
    }

    /// Received features of frame `i` as interleaved (re, im) pairs.
    fn input_row(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.inner.len() {
            return Err(PyValueError::new_err(format!("row {i} out of range")));
        }
        Ok(self.inner.inputs.row(i).to_vec())
    }

    /// Transmitted features of frame `i`.
    fn target_row(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.inner.len() {
            return Err(PyValueError::new_err(format!("row {i} out of range")));
        }
        Ok(self.inner.targets.row(i).to_vec())
    }
}

/// Synthesizes a dataset of channel- and phase-impaired frames.
#[pyfunction]
#[pyo3(signature = (n, m, frame_len, snr_min_db, snr_max_db, size, seed, unit_channels=false, nakagami=None))]
#[allow(clippy::too_many_arguments)]
fn generate_dataset(
    n: usize,
    m: usize,
    frame_len: usize,
    snr_min_db: f64,
    snr_max_db: f64,
    size: usize,
    seed: u64,
    unit_channels: bool,
    nakagami: Option<(f64, f64)>,
) -> PyResult<Dataset> {
    let gen = GenConfig {
        ris_elements: n,
        tx_antennas: m,
        frame_len,
        modulation_order: 4,
        snr_min_db,
        snr_max_db,
        fading: build_fading(nakagami)?,
        pathloss_gain: 1.0,
        power_budget: 1.0,
        unit_channels,
    };
    Ok(Dataset {
        inner: training::generate_dataset(&gen, size, seed).map_err(value_err)?,
    })
}

/// A trained detector plus its training history.
#[pyclass]
struct TrainedDetector {
    checkpoint: Checkpoint,
    detector: DeepRisDetector,
    history: Option<TrainHistory>,
}

impl TrainedDetector {
    fn from_checkpoint(checkpoint: Checkpoint, history: Option<TrainHistory>) -> PyResult<Self> {
        let detector = DeepRisDetector::from_checkpoint(&checkpoint).map_err(value_err)?;
        Ok(Self {
            checkpoint,
            detector,
            history,
        })
    }
}

#[pymethods]
impl TrainedDetector {
    #[getter]
    fn frame_len(&self) -> usize {
        self.checkpoint.frame_len
    }

    #[getter]
    fn layer_dims(&self) -> Vec<usize> {
        self.checkpoint.params.layer_dims().to_vec()
    }

    /// Per-epoch validation losses of the training run (empty if loaded).
    fn validation_losses(&self) -> Vec<f64> {
        self.history
            .as_ref()
            .map(|h| h.records.iter().map(|r| r.val_loss).collect())
            .unwrap_or_default()
    }

    fn train_losses(&self) -> Vec<f64> {
        self.history
            .as_ref()
            .map(|h| h.records.iter().map(|r| r.train_loss).collect())
            .unwrap_or_default()
    }

    fn stop_reason(&self) -> String {
        match self.history.as_ref().map(|h| h.stop_reason) {
            Some(training::StopReason::Patience) => "patience".into(),
            Some(training::StopReason::MaxEpochs) => "max_epochs".into(),
            None => "loaded".into(),
        }
    }

    /// Detects the bits of one received frame of complex samples.
    fn detect(&self, received: Vec<Complex64>) -> PyResult<Vec<u8>> {
        self.detector.detect_frame(&received).map_err(value_err)
    }

    /// Writes the checkpoint file.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        training::save_checkpoint(&path, &self.checkpoint)
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    /// Loads a checkpoint file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let checkpoint =
            training::load_checkpoint(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Self::from_checkpoint(checkpoint, None)
    }
}

/// Trains the detector network on a dataset.
#[pyfunction]
#[pyo3(signature = (dataset, hidden_dims=None, batch_size=64, max_epochs=50, patience=10,
                    learning_rate=0.01, lambda_=0.0001, dropout=0.5, validation_fraction=0.2,
                    improvement_tol=1e-5, seed=0, adam_bias_correction=false))]
#[allow(clippy::too_many_arguments)]
fn train_detector(
    dataset: &Dataset,
    hidden_dims: Option<Vec<usize>>,
    batch_size: usize,
    max_epochs: usize,
    patience: usize,
    learning_rate: f64,
    lambda_: f64,
    dropout: f64,
    validation_fraction: f64,
    improvement_tol: f64,
    seed: u64,
    adam_bias_correction: bool,
) -> PyResult<TrainedDetector> {
    let cfg = TrainConfig {
        batch_size,
        max_epochs,
        learning_rate,
        lambda: lambda_,
        dropout,
        validation_fraction,
        patience,
        improvement_tol,
        seed,
        hidden_dims: hidden_dims.unwrap_or_else(|| vec![500, 250, 100]),
        adam_bias_correction,
        ..TrainConfig::default()
    };
    let (params, norm, history) = training::train(&dataset.inner, &cfg).map_err(value_err)?;
    let checkpoint = Checkpoint {
        params,
        norm,
        modulation_order: dataset.inner.meta.modulation_order,
        frame_len: dataset.inner.meta.frame_len,
        train_config: cfg,
        gen_digest: 0,
    };
    TrainedDetector::from_checkpoint(checkpoint, Some(history))
}

/// Measures one detector's BER over a scenario line, e.g.
/// `label=a csi=perfect fading=rayleigh n=16 m=4 frame_len=16 snr_db=10,15,20 detectors=ml`.
/// Returns `(snr_db, bits, errors, ber, ci95)` per SNR point.
#[pyfunction]
#[pyo3(signature = (detector, scenario, model=None, min_bits=100000, min_errors=100, max_bits=10000000, seed=0))]
fn measure_ber(
    detector: &str,
    scenario: &str,
    model: Option<&TrainedDetector>,
    min_bits: u64,
    min_errors: u64,
    max_bits: u64,
    seed: u64,
) -> PyResult<Vec<(f64, u64, u64, f64, f64)>> {
    let kind = DetectorKind::parse(detector)
        .ok_or_else(|| PyValueError::new_err(format!("unknown detector '{detector}'")))?;
    let scenario = Scenario::parse_line(scenario).map_err(value_err)?;
    let stop = StopRule {
        min_bits,
        min_errors,
        max_bits,
    };
    let curve = eval::measure_ber(kind, &scenario, model.map(|m| &m.detector), &stop, seed)
        .map_err(value_err)?;
    Ok(curve
        .points
        .into_iter()
        .map(|p| (p.snr_db, p.bits, p.errors, p.ber, p.ci95))
        .collect())
}

#[pymodule]
fn deepris_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Constellation>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<TrainedDetector>()?;
    m.add_function(wrap_pyfunction!(pathloss, m)?)?;
    m.add_function(wrap_pyfunction!(gain_moments, m)?)?;
    m.add_function(wrap_pyfunction!(cophased_gain_samples, m)?)?;
    m.add_function(wrap_pyfunction!(complexity_report, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train_detector, m)?)?;
    m.add_function(wrap_pyfunction!(measure_ber, m)?)?;
    Ok(())
}
