//! Dataset synthesis, normalization, the training loop, and checkpoints.
//!
//! A training sample is one coherence frame: `L` symbols sent through a
//! freshly drawn channel with uniform-random RIS phases and a noise level
//! drawn from the configured SNR range, all held fixed across the frame.
//! Inputs are the received samples as interleaved (re, im) pairs, targets
//! the transmitted symbols in the same encoding. The transmitter applies
//! maximum-ratio transmission on the effective cascaded channel; the
//! receiver sees only the frame.

use crate::channel::{
    mrt_beamformer, nominal_received_power, transmit, ChannelError, ChannelRealization,
    FadingModel, NoiseModel, PhaseConfig,
};
use crate::modem::{Bit, Constellation, ModemError};
use crate::neural::{
    adam_step, backward, forward, init_mlp, loss, AdamState, MlpParams, Mode, NeuralError,
};
use crate::rng::{stream_rng, StreamPurpose};
use ndarray::{Array1, Array2, ArrayView1, Axis};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::Read;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset has {rows} rows; need at least {needed} after the validation split")]
    InsufficientData { rows: usize, needed: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Modem(#[from] ModemError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Link and sweep parameters for dataset synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub ris_elements: usize,
    pub tx_antennas: usize,
    pub frame_len: usize,
    pub modulation_order: usize,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub fading: FadingModel,
    pub pathloss_gain: f64,
    pub power_budget: f64,
    /// Replace fading draws with all-ones hops; diagnostic configurations
    /// such as the noiseless identity link use this.
    pub unit_channels: bool,
}

impl GenConfig {
    /// A degenerate link whose received frames equal the transmitted
    /// symbols: single antenna, single element, unit-magnitude channels,
    /// and an SNR high enough that noise vanishes at double precision.
    pub fn noiseless_identity(frame_len: usize) -> Self {
        Self {
            ris_elements: 1,
            tx_antennas: 1,
            frame_len,
            modulation_order: 4,
            snr_min_db: 600.0,
            snr_max_db: 600.0,
            fading: FadingModel::Rayleigh,
            pathloss_gain: 1.0,
            power_budget: 1.0,
            unit_channels: true,
        }
    }

    fn validate(&self) -> Result<(), TrainError> {
        if self.ris_elements == 0 || self.tx_antennas == 0 || self.frame_len == 0 {
            return Err(TrainError::InvalidConfig(
                "ris_elements, tx_antennas, and frame_len must be positive".into(),
            ));
        }
        if self.snr_min_db > self.snr_max_db {
            return Err(TrainError::InvalidConfig(format!(
                "snr_min_db {} exceeds snr_max_db {}",
                self.snr_min_db, self.snr_max_db
            )));
        }
        if !(self.pathloss_gain > 0.0) || !(self.power_budget > 0.0) {
            return Err(TrainError::InvalidConfig(
                "pathloss_gain and power_budget must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Noise variance that realizes `snr_db` of average received SNR for
    /// unit-energy symbols under this link's statistics.
    pub fn noise_variance_for_snr(&self, snr_db: f64) -> f64 {
        let reference = nominal_received_power(
            self.ris_elements,
            self.tx_antennas,
            self.power_budget,
            self.pathloss_gain,
            &self.fading,
        );
        reference * 10f64.powf(-snr_db / 10.0)
    }
}

/// One simulated coherence frame.
#[derive(Debug, Clone)]
pub struct Frame {
    pub bits: Vec<Bit>,
    pub symbols: Vec<Complex64>,
    pub received: Vec<Complex64>,
    /// Effective scalar channel the frame was sent through.
    pub gain: Complex64,
    pub noise_variance: f64,
}

/// Draws a channel, uniform-random phases, an MRT beam, and a symbol
/// frame, and runs the transmission. The generator is consumed in a fixed
/// order (channel, phases, bits, noise), so one stream per frame gives
/// reproducible parallel synthesis.
pub fn simulate_frame(
    gen: &GenConfig,
    constellation: &Constellation,
    noise_variance: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Frame, TrainError> {
    let channel = if gen.unit_channels {
        ChannelRealization::all_ones(gen.ris_elements, gen.tx_antennas, gen.pathloss_gain)
    } else {
        ChannelRealization::sample(
            gen.ris_elements,
            gen.tx_antennas,
            gen.fading,
            gen.pathloss_gain,
            rng,
        )
    };
    let phases = PhaseConfig::uniform_random(gen.ris_elements, rng);
    let beam = mrt_beamformer(&channel, &phases, gen.power_budget)?;
    let bits: Vec<Bit> = (0..gen.frame_len * constellation.bits_per_symbol())
        .map(|_| rng.random_range(0..2) as Bit)
        .collect();
    let symbols = constellation.modulate(&bits)?;
    let noise = if noise_variance > 0.0 {
        NoiseModel::new(noise_variance)?
    } else {
        NoiseModel::silent()
    };
    let row = crate::channel::effective_row_channel(&channel, &phases);
    let gain: Complex64 = row.iter().zip(beam.weights()).map(|(r, w)| r * w).sum();
    let received = transmit(
        &channel,
        &phases,
        std::slice::from_ref(&beam),
        std::slice::from_ref(&symbols),
        &noise,
        rng,
    )?;
    Ok(Frame {
        bits,
        symbols,
        received,
        gain,
        noise_variance,
    })
}

/// Interleaves complex samples as (re, im) pairs into `out`.
pub fn encode_features(samples: &[Complex64], out: &mut [f64]) {
    debug_assert_eq!(out.len(), 2 * samples.len());
    for (s, pair) in samples.iter().zip(out.chunks_exact_mut(2)) {
        pair[0] = s.re;
        pair[1] = s.im;
    }
}

/// Inverse of [`encode_features`].
pub fn decode_features(features: ArrayView1<f64>) -> Vec<Complex64> {
    let v: Vec<f64> = features.to_vec();
    v.chunks_exact(2)
        .map(|p| Complex64::new(p[0], p[1]))
        .collect()
}

/// Rows of received/transmitted frame features plus the generating config.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    pub meta: GenConfig,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.inputs.ncols()
    }
}

/// Synthesizes `size` frames. Each frame draws a fresh channel, fresh
/// uniform phases, and an SNR uniform over the configured range; frames
/// are generated on independent streams and assembled in frame order.
pub fn generate_dataset(gen: &GenConfig, size: usize, seed: u64) -> Result<Dataset, TrainError> {
    gen.validate()?;
    if size == 0 {
        return Err(TrainError::InvalidConfig("dataset size must be >= 1".into()));
    }
    let constellation = Constellation::qam(gen.modulation_order)?;
    let width = 2 * gen.frame_len;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..size)
        .into_par_iter()
        .map(|frame_idx| {
            let mut rng = stream_rng(seed, StreamPurpose::Dataset, frame_idx as u64);
            let snr_db = if gen.snr_max_db > gen.snr_min_db {
                rng.random_range(gen.snr_min_db..gen.snr_max_db)
            } else {
                gen.snr_min_db
            };
            let sigma2 = gen.noise_variance_for_snr(snr_db);
            let frame = simulate_frame(gen, &constellation, sigma2, &mut rng)?;
            let mut input = vec![0.0; width];
            let mut target = vec![0.0; width];
            encode_features(&frame.received, &mut input);
            encode_features(&frame.symbols, &mut target);
            Ok((input, target))
        })
        .collect::<Result<_, TrainError>>()?;
    let mut inputs = Array2::zeros((size, width));
    let mut targets = Array2::zeros((size, width));
    for (i, (input, target)) in rows.into_iter().enumerate() {
        inputs.row_mut(i).assign(&Array1::from(input));
        targets.row_mut(i).assign(&Array1::from(target));
    }
    Ok(Dataset {
        inputs,
        targets,
        meta: gen.clone(),
        seed,
    })
}

/// Per-feature input means, subtracted identically at train and inference
/// time.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    means: Vec<f64>,
}

impl NormStats {
    pub fn from_means(means: Vec<f64>) -> Self {
        Self { means }
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    /// Subtracts the stored means from one feature vector in place.
    pub fn apply(&self, features: &mut [f64]) {
        debug_assert_eq!(features.len(), self.means.len());
        for (f, m) in features.iter_mut().zip(&self.means) {
            *f -= m;
        }
    }

    /// Subtracts the stored means from every row.
    pub fn apply_matrix(&self, features: &mut Array2<f64>) {
        let means = Array1::from(self.means.clone());
        *features -= &means;
    }
}

fn column_means(inputs: &Array2<f64>) -> Vec<f64> {
    inputs
        .mean_axis(Axis(0))
        .expect("non-empty dataset")
        .to_vec()
}

/// Zero-centers the dataset inputs, returning the centered copy and the
/// per-feature means for reuse at inference time.
pub fn normalize(dataset: &Dataset) -> Result<(Dataset, NormStats), TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let stats = NormStats::from_means(column_means(&dataset.inputs));
    let mut centered = dataset.clone();
    stats.apply_matrix(&mut centered.inputs);
    Ok((centered, stats))
}

/// Training-loop hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub dropout: f64,
    pub validation_fraction: f64,
    pub patience: usize,
    pub improvement_tol: f64,
    pub seed: u64,
    pub hidden_dims: Vec<usize>,
    pub adam_delta1: f64,
    pub adam_delta2: f64,
    pub adam_epsilon: f64,
    pub adam_bias_correction: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_epochs: 1000,
            learning_rate: 0.01,
            lambda: 1e-4,
            dropout: 0.5,
            validation_fraction: 0.2,
            patience: 50,
            improvement_tol: 1e-5,
            seed: 0,
            hidden_dims: vec![500, 250, 100],
            adam_delta1: 0.9,
            adam_delta2: 0.999,
            adam_epsilon: 1e-8,
            adam_bias_correction: false,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(TrainError::InvalidConfig(
                "batch_size and max_epochs must be positive".into(),
            ));
        }
        if !(0.0 < self.validation_fraction && self.validation_fraction < 1.0) {
            return Err(TrainError::InvalidConfig(format!(
                "validation_fraction {} outside (0, 1)",
                self.validation_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TrainError::InvalidConfig(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.lambda < 0.0 {
            return Err(TrainError::InvalidConfig(format!(
                "lambda {} must be >= 0",
                self.lambda
            )));
        }
        if self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(TrainError::InvalidConfig("hidden_dims contain zero".into()));
        }
        Ok(())
    }
}

/// Why the training loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// The validation loss stalled for `patience` consecutive epochs.
    Patience,
    /// The epoch budget ran out.
    MaxEpochs,
}

/// One epoch's recorded losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Loss trajectory of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub learning_rate: f64,
    pub stop_reason: StopReason,
    /// Epoch (1-based) whose parameters were returned.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn final_val_loss(&self) -> f64 {
        self.records.last().map(|r| r.val_loss).unwrap_or(f64::NAN)
    }

    pub fn best_val_loss(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.val_loss)
            .fold(f64::INFINITY, f64::min)
    }
}

/// A seeded split into disjoint training and validation index sets; the
/// validation set is the tail of one shuffle.
pub fn split_indices(
    n: usize,
    validation_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(rng);
    let n_val = ((n as f64) * validation_fraction).round() as usize;
    let split = n.saturating_sub(n_val);
    let val = indices.split_off(split);
    (indices, val)
}

/// Trains the detector network on the dataset.
///
/// The data is shuffled once and split, inputs are zero-centered with the
/// training rows' means, and each epoch reshuffles the training rows and
/// walks mini-batches through forward/loss/backward/Adam. Validation loss
/// is evaluated once per epoch with dropout off; training stops when it
/// has not improved by more than the tolerance for `patience` consecutive
/// epochs, or at the epoch budget. The returned parameters are the
/// snapshot with the lowest validation loss.
pub fn train(
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(MlpParams, NormStats, TrainHistory), TrainError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let n = dataset.len();
    let mut rng = stream_rng(cfg.seed, StreamPurpose::Training, 0);

    let (train_idx, val_idx) = split_indices(n, cfg.validation_fraction, &mut rng);
    if train_idx.len() < cfg.batch_size || val_idx.is_empty() {
        return Err(TrainError::InsufficientData {
            rows: n,
            needed: cfg.batch_size + 1,
        });
    }

    let mut train_inputs = dataset.inputs.select(Axis(0), &train_idx);
    let train_targets = dataset.targets.select(Axis(0), &train_idx);
    let mut val_inputs = dataset.inputs.select(Axis(0), &val_idx);
    let val_targets = dataset.targets.select(Axis(0), &val_idx);

    let stats = NormStats::from_means(column_means(&train_inputs));
    stats.apply_matrix(&mut train_inputs);
    stats.apply_matrix(&mut val_inputs);

    let constellation = Constellation::qam(dataset.meta.modulation_order)?;
    let width = dataset.feature_dim();
    let mut dims = Vec::with_capacity(cfg.hidden_dims.len() + 2);
    dims.push(width);
    dims.extend_from_slice(&cfg.hidden_dims);
    dims.push(width);

    let mut params = init_mlp(&dims, constellation.amplitude_bound(), &mut rng)?;
    let mut adam = AdamState::new(
        &params,
        cfg.learning_rate,
        cfg.adam_delta1,
        cfg.adam_delta2,
        cfg.adam_epsilon,
        cfg.adam_bias_correction,
    );

    let n_train = train_idx.len();
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut records = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut stale_epochs = 0;
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut mse_acc = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = train_inputs.select(Axis(0), batch);
            let t = train_targets.select(Axis(0), batch);
            let (out, cache) = forward(
                &params,
                x.view(),
                Mode::Train {
                    p_drop: cfg.dropout,
                    rng: &mut rng,
                },
            )?;
            let batch_loss = loss(out.view(), t.view(), &params, cfg.lambda)?;
            mse_acc += batch_loss.mse_part * batch.len() as f64;
            let grads = backward(&params, &cache, t.view(), cfg.lambda)?;
            adam_step(&mut params, &grads, &mut adam);
        }
        // histories track the task error; the L2 penalty is part of the
        // optimized objective but not of the monitored curves
        let train_loss = mse_acc / n_train as f64;

        let (val_out, _) = forward(&params, val_inputs.view(), Mode::Infer)?;
        let val_loss = loss(val_out.view(), val_targets.view(), &params, cfg.lambda)?.mse_part;
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });

        let improved_beyond_tol = val_loss < best_val - cfg.improvement_tol;
        if val_loss < best_val {
            best_val = val_loss;
            best_params = params.clone();
            best_epoch = epoch;
        }
        if improved_beyond_tol {
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= cfg.patience {
                stop_reason = StopReason::Patience;
                break;
            }
        }
    }

    let history = TrainHistory {
        records,
        learning_rate: cfg.learning_rate,
        stop_reason,
        best_epoch,
    };
    Ok((best_params, stats, history))
}

// ---------------------------------------------------------------------------
// Checkpoint persistence
// ---------------------------------------------------------------------------

/// Checkpoint format tag.
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DEEPRISC";
/// Current checkpoint format version.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupted checkpoint: {0}")]
    Corrupted(String),
}

/// Everything needed to run the trained detector elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: MlpParams,
    pub norm: NormStats,
    pub modulation_order: usize,
    pub frame_len: usize,
    pub train_config: TrainConfig,
    /// Digest of the resolved configuration that generated the training
    /// data; provenance only.
    pub gen_digest: u64,
}

struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Corrupted(format!(
                "truncated at byte {} of {}",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Serializes a checkpoint to its little-endian byte layout.
pub fn checkpoint_bytes(c: &Checkpoint) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.buf.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u32(c.modulation_order as u32);
    w.u32(c.frame_len as u32);
    w.f64(c.params.output_scale());
    w.u64(c.gen_digest);
    w.u64(c.train_config.seed);
    w.f64(c.train_config.learning_rate);
    w.f64(c.train_config.lambda);
    w.f64(c.train_config.dropout);
    w.f64(c.train_config.validation_fraction);
    w.f64(c.train_config.improvement_tol);
    w.f64(c.train_config.adam_delta1);
    w.f64(c.train_config.adam_delta2);
    w.f64(c.train_config.adam_epsilon);
    w.u32(c.train_config.batch_size as u32);
    w.u32(c.train_config.max_epochs as u32);
    w.u32(c.train_config.patience as u32);
    w.u32(c.train_config.adam_bias_correction as u32);
    let dims = c.params.layer_dims();
    w.u32(dims.len() as u32);
    for &d in dims {
        w.u32(d as u32);
    }
    w.u32(c.norm.len() as u32);
    for &m in c.norm.means() {
        w.f64(m);
    }
    for (weights, biases) in c.params.weights().iter().zip(c.params.biases()) {
        for &v in weights.iter() {
            w.f64(v);
        }
        for &v in biases.iter() {
            w.f64(v);
        }
    }
    w.buf
}

/// Parses the byte layout written by [`checkpoint_bytes`]. The whole
/// buffer must be consumed exactly; anything shorter or longer is
/// rejected as corrupted.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = ByteReader::new(bytes);
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let modulation_order = r.u32()? as usize;
    let frame_len = r.u32()? as usize;
    let output_scale = r.f64()?;
    let gen_digest = r.u64()?;
    let seed = r.u64()?;
    let learning_rate = r.f64()?;
    let lambda = r.f64()?;
    let dropout = r.f64()?;
    let validation_fraction = r.f64()?;
    let improvement_tol = r.f64()?;
    let adam_delta1 = r.f64()?;
    let adam_delta2 = r.f64()?;
    let adam_epsilon = r.f64()?;
    let batch_size = r.u32()? as usize;
    let max_epochs = r.u32()? as usize;
    let patience = r.u32()? as usize;
    let adam_bias_correction = r.u32()? != 0;

    let n_dims = r.u32()? as usize;
    if !(2..=64).contains(&n_dims) {
        return Err(CheckpointError::Corrupted(format!(
            "implausible layer count {n_dims}"
        )));
    }
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        let d = r.u32()? as usize;
        if d == 0 {
            return Err(CheckpointError::Corrupted("zero layer width".into()));
        }
        dims.push(d);
    }
    let norm_len = r.u32()? as usize;
    if norm_len != dims[0] {
        return Err(CheckpointError::Corrupted(format!(
            "{norm_len} normalization means for input dim {}",
            dims[0]
        )));
    }
    let mut means = Vec::with_capacity(norm_len);
    for _ in 0..norm_len {
        means.push(r.f64()?);
    }
    let mut weights = Vec::with_capacity(n_dims - 1);
    let mut biases = Vec::with_capacity(n_dims - 1);
    for t in 0..n_dims - 1 {
        let (rows, cols) = (dims[t + 1], dims[t]);
        let mut w = Array2::zeros((rows, cols));
        for i in 0..rows {
            for j in 0..cols {
                w[(i, j)] = r.f64()?;
            }
        }
        let mut b = Array1::zeros(rows);
        for i in 0..rows {
            b[i] = r.f64()?;
        }
        weights.push(w);
        biases.push(b);
    }
    if !r.done() {
        return Err(CheckpointError::Corrupted(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let params = MlpParams::from_parts(dims, weights, biases, output_scale)
        .map_err(|e| CheckpointError::Corrupted(e.to_string()))?;
    let hidden_dims = params.layer_dims()[1..params.layer_dims().len() - 1].to_vec();
    Ok(Checkpoint {
        params,
        norm: NormStats::from_means(means),
        modulation_order,
        frame_len,
        train_config: TrainConfig {
            batch_size,
            max_epochs,
            learning_rate,
            lambda,
            dropout,
            validation_fraction,
            patience,
            improvement_tol,
            seed,
            hidden_dims,
            adam_delta1,
            adam_delta2,
            adam_epsilon,
            adam_bias_correction,
        },
        gen_digest,
    })
}

/// Writes the checkpoint atomically (temp file in the same directory,
/// then rename).
pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), CheckpointError> {
    crate::config::write_atomic(path, &checkpoint_bytes(checkpoint))?;
    Ok(())
}

/// Reads and validates a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    checkpoint_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn toy_dataset(frames: usize, frame_len: usize, seed: u64) -> Dataset {
        generate_dataset(&GenConfig::noiseless_identity(frame_len), frames, seed).unwrap()
    }

    fn quick_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            max_epochs: 30,
            patience: 10,
            hidden_dims: vec![32, 16],
            dropout: 0.2,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn dataset_has_requested_shape() {
        let d = toy_dataset(50, 4, 1);
        assert_eq!(d.len(), 50);
        assert_eq!(d.feature_dim(), 8);
        assert_eq!(d.targets.dim(), (50, 8));
    }

    #[test]
    fn noiseless_identity_frames_reproduce_the_symbols() {
        let d = toy_dataset(20, 4, 2);
        for (x, t) in d.inputs.outer_iter().zip(d.targets.outer_iter()) {
            for (a, b) in x.iter().zip(t.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn targets_are_constellation_coordinates() {
        let gen = GenConfig {
            ris_elements: 4,
            tx_antennas: 2,
            frame_len: 8,
            modulation_order: 4,
            snr_min_db: 0.0,
            snr_max_db: 30.0,
            fading: FadingModel::Rayleigh,
            pathloss_gain: 1.0,
            power_budget: 1.0,
            unit_channels: false,
        };
        let d = generate_dataset(&gen, 40, 3).unwrap();
        for &t in d.targets.iter() {
            assert!(
                (t.abs() - FRAC_1_SQRT_2).abs() < 1e-12,
                "target coordinate {t} is not +-1/sqrt(2)"
            );
        }
    }

    #[test]
    fn generation_is_deterministic_and_seed_sensitive() {
        let a = toy_dataset(10, 4, 7);
        let b = toy_dataset(10, 4, 7);
        let c = toy_dataset(10, 4, 8);
        assert_eq!(a.inputs, b.inputs);
        assert_ne!(a.inputs, c.inputs);
    }

    #[test]
    fn invalid_generation_configs_are_rejected() {
        let mut gen = GenConfig::noiseless_identity(4);
        gen.snr_min_db = 10.0;
        gen.snr_max_db = 0.0;
        assert!(generate_dataset(&gen, 5, 0).is_err());
        assert!(generate_dataset(&GenConfig::noiseless_identity(4), 0, 0).is_err());
    }

    #[test]
    fn normalization_zero_centers_every_feature() {
        let gen = GenConfig {
            snr_min_db: 10.0,
            snr_max_db: 20.0,
            ..GenConfig::noiseless_identity(4)
        };
        let d = generate_dataset(&gen, 200, 4).unwrap();
        let (centered, stats) = normalize(&d).unwrap();
        for mean in column_means(&centered.inputs) {
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-10);
        }
        assert_eq!(stats.len(), 8);
    }

    #[test]
    fn normalizing_zero_mean_data_is_identity() {
        let mut d = toy_dataset(16, 2, 5);
        let stats = NormStats::from_means(column_means(&d.inputs));
        stats.apply_matrix(&mut d.inputs);
        let (again, stats2) = normalize(&d).unwrap();
        for m in stats2.means() {
            assert_abs_diff_eq!(*m, 0.0, epsilon = 1e-12);
        }
        for (a, b) in again.inputs.iter().zip(d.inputs.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn stored_stats_generalize_to_fresh_data() {
        let gen = GenConfig {
            snr_min_db: 5.0,
            snr_max_db: 25.0,
            ris_elements: 4,
            tx_antennas: 2,
            unit_channels: false,
            ..GenConfig::noiseless_identity(4)
        };
        let d1 = generate_dataset(&gen, 4000, 11).unwrap();
        let (_, stats) = normalize(&d1).unwrap();
        let mut d2 = generate_dataset(&gen, 4000, 12).unwrap();
        stats.apply_matrix(&mut d2.inputs);
        let residual = column_means(&d2.inputs);
        // per-feature std is O(sqrt(N*M)); Monte Carlo bound at 4000 frames
        for m in residual {
            assert!(m.abs() < 0.3, "residual mean {m} too large");
        }
    }

    #[test]
    fn split_is_disjoint_and_complete() {
        let mut rng = stream_rng(9, StreamPurpose::Scratch, 0);
        let (train, val) = split_indices(100, 0.2, &mut rng);
        assert_eq!(train.len(), 80);
        assert_eq!(val.len(), 20);
        let mut all: Vec<usize> = train.iter().chain(val.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn successive_shuffles_differ() {
        let mut rng = stream_rng(10, StreamPurpose::Scratch, 1);
        let mut a: Vec<usize> = (0..64).collect();
        a.shuffle(&mut rng);
        let mut b = a.clone();
        b.shuffle(&mut rng);
        assert_ne!(a, b);
    }

    #[test]
    fn toy_problem_trains_to_a_fraction_of_the_initial_loss() {
        let d = toy_dataset(600, 4, 21);
        let cfg = quick_cfg(1);
        let (_, _, history) = train(&d, &cfg).unwrap();
        let first = history.records[0].val_loss;
        let last = history.best_val_loss();
        assert!(
            last < 0.01 * first,
            "validation loss {last} did not reach 1% of {first}"
        );
    }

    #[test]
    fn frozen_learning_rate_stops_on_patience() {
        let d = toy_dataset(200, 2, 22);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            patience: 5,
            max_epochs: 100,
            ..quick_cfg(2)
        };
        let (_, _, history) = train(&d, &cfg).unwrap();
        assert_eq!(history.stop_reason, StopReason::Patience);
        // first evaluation improves from infinity; the next `patience`
        // evaluations are flat
        assert_eq!(history.records.len(), cfg.patience + 1);
        assert_eq!(history.best_epoch, 1);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let d = toy_dataset(300, 4, 23);
        let cfg = TrainConfig {
            max_epochs: 5,
            patience: 5,
            ..quick_cfg(3)
        };
        let (p1, n1, h1) = train(&d, &cfg).unwrap();
        let (p2, n2, h2) = train(&d, &cfg).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(n1, n2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn returned_parameters_achieve_the_recorded_minimum() {
        let d = toy_dataset(300, 4, 24);
        let cfg = TrainConfig {
            max_epochs: 12,
            ..quick_cfg(4)
        };
        let (params, _, history) = train(&d, &cfg).unwrap();
        // recompute the validation loss of the returned parameters on the
        // same split and normalization
        let mut rng = stream_rng(cfg.seed, StreamPurpose::Training, 0);
        let (train_idx, val_idx) = split_indices(d.len(), cfg.validation_fraction, &mut rng);
        let train_inputs = d.inputs.select(Axis(0), &train_idx);
        let stats = NormStats::from_means(column_means(&train_inputs));
        let mut val_inputs = d.inputs.select(Axis(0), &val_idx);
        stats.apply_matrix(&mut val_inputs);
        let val_targets = d.targets.select(Axis(0), &val_idx);
        let (out, _) = forward(&params, val_inputs.view(), Mode::Infer).unwrap();
        let recomputed = loss(out.view(), val_targets.view(), &params, cfg.lambda)
            .unwrap()
            .mse_part;
        assert_abs_diff_eq!(recomputed, history.best_val_loss(), epsilon = 1e-12);
    }

    #[test]
    fn small_learning_rate_beats_a_huge_one() {
        let d = toy_dataset(400, 4, 25);
        let base = TrainConfig {
            max_epochs: 15,
            patience: 15,
            ..quick_cfg(5)
        };
        let good = train(
            &d,
            &TrainConfig {
                learning_rate: 0.01,
                ..base.clone()
            },
        )
        .unwrap()
        .2;
        let bad = train(
            &d,
            &TrainConfig {
                learning_rate: 0.5,
                ..base
            },
        )
        .unwrap()
        .2;
        assert!(
            good.final_val_loss() <= bad.final_val_loss(),
            "lr 0.01 ({}) should not lose to lr 0.5 ({})",
            good.final_val_loss(),
            bad.final_val_loss()
        );
    }

    #[test]
    fn insufficient_data_is_reported() {
        let d = toy_dataset(10, 2, 26);
        let cfg = TrainConfig {
            batch_size: 64,
            ..quick_cfg(6)
        };
        assert!(matches!(
            train(&d, &cfg),
            Err(TrainError::InsufficientData { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trips_bit_for_bit() {
        let d = toy_dataset(200, 4, 27);
        let cfg = TrainConfig {
            max_epochs: 3,
            patience: 3,
            ..quick_cfg(7)
        };
        let (params, norm, _) = train(&d, &cfg).unwrap();
        let checkpoint = Checkpoint {
            params,
            norm,
            modulation_order: 4,
            frame_len: 4,
            train_config: cfg,
            gen_digest: 0xDEADBEEF,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &checkpoint).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, checkpoint);
        // bitwise identity of every weight
        for (a, b) in loaded
            .params
            .weights()
            .iter()
            .zip(checkpoint.params.weights())
        {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let d = toy_dataset(100, 2, 28);
        let cfg = TrainConfig {
            max_epochs: 2,
            patience: 2,
            ..quick_cfg(8)
        };
        let (params, norm, _) = train(&d, &cfg).unwrap();
        let checkpoint = Checkpoint {
            params,
            norm,
            modulation_order: 4,
            frame_len: 2,
            train_config: cfg,
            gen_digest: 1,
        };
        let bytes = checkpoint_bytes(&checkpoint);
        let truncated = &bytes[..bytes.len() - 9];
        assert!(matches!(
            checkpoint_from_bytes(truncated),
            Err(CheckpointError::Corrupted(_))
        ));
        let mut extended = bytes.clone();
        extended.push(0);
        assert!(matches!(
            checkpoint_from_bytes(&extended),
            Err(CheckpointError::Corrupted(_))
        ));
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(matches!(
            checkpoint_from_bytes(&wrong_magic),
            Err(CheckpointError::BadMagic)
        ));
        let mut wrong_version = bytes;
        wrong_version[8] = 99;
        assert!(matches!(
            checkpoint_from_bytes(&wrong_version),
            Err(CheckpointError::UnsupportedVersion(99))
        ));
    }

    #[test]
    fn full_size_layer_dims_survive_the_round_trip() {
        let mut rng = stream_rng(50, StreamPurpose::Scratch, 2);
        let params = init_mlp(&[2, 500, 250, 100, 2], FRAC_1_SQRT_2, &mut rng).unwrap();
        let norm = NormStats::from_means(vec![0.0, 0.0]);
        let checkpoint = Checkpoint {
            params,
            norm,
            modulation_order: 4,
            frame_len: 1,
            train_config: TrainConfig::default(),
            gen_digest: 2,
        };
        let loaded = checkpoint_from_bytes(&checkpoint_bytes(&checkpoint)).unwrap();
        assert_eq!(loaded.params.layer_dims(), &[2, 500, 250, 100, 2]);
        assert_eq!(loaded, checkpoint);
    }
}
