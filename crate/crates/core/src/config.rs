//! The flat key-value run configuration.
//!
//! A config file holds `key = value` lines with `#` comments. Precedence,
//! lowest to highest: built-in defaults, the desk-scale preset (when
//! `desk_scale` resolves true), the `DEEPRIS_SEED` environment variable,
//! file entries in order, then flag overrides in order. Unknown keys are
//! rejected, every field is validated, and the canonical rendering of the
//! resolved config feeds a digest that output files embed for provenance.

use crate::baselines::CsiQuality;
use crate::channel::{pathloss, FadingModel};
use crate::eval::StopRule;
use crate::training::{GenConfig, TrainConfig};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("unknown configuration key '{0}'")]
    UnknownKey(String),
    #[error("invalid value '{value}' for key '{key}': {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("constraint violation on key '{key}': {reason}")]
    Constraint { key: String, reason: String },
    #[error("malformed line {line}: expected 'key = value'")]
    MalformedLine { line: usize },
}

/// Environment variable consulted for a default master seed.
pub const SEED_ENV_VAR: &str = "DEEPRIS_SEED";

/// Every tunable of the simulator, trainer, and evaluator.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub modulation_order: usize,
    pub tx_antennas: usize,
    pub ris_elements: usize,
    pub fading: FadingKind,
    pub nakagami_m: f64,
    pub nakagami_omega: f64,
    pub unit_pathloss: bool,
    pub distance: f64,
    pub power_budget: f64,
    pub frame_len: usize,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub train_samples: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub improvement_tol: f64,
    pub validation_split: f64,
    pub learning_rate: f64,
    pub lambda: f64,
    pub dropout: f64,
    pub adam_delta1: f64,
    pub adam_delta2: f64,
    pub adam_epsilon: f64,
    pub adam_bias_correction: bool,
    pub hidden_dims: Vec<usize>,
    pub csi_error_fraction: f64,
    pub eval_snr_db: Vec<f64>,
    pub min_bits: u64,
    pub min_errors: u64,
    pub max_bits: u64,
    pub desk_scale: bool,
    pub unit_channels: bool,
    pub seed: u64,
}

/// Fading law selector for the config surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FadingKind {
    Rayleigh,
    Nakagami,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            modulation_order: 4,
            tx_antennas: 32,
            ris_elements: 64,
            fading: FadingKind::Rayleigh,
            nakagami_m: 1.0,
            nakagami_omega: 1.0,
            unit_pathloss: true,
            distance: 1.0,
            power_budget: 1.0,
            frame_len: 16,
            snr_min_db: 0.0,
            snr_max_db: 30.0,
            train_samples: 70_000,
            batch_size: 64,
            max_epochs: 1000,
            patience: 50,
            improvement_tol: 1e-5,
            validation_split: 0.2,
            learning_rate: 0.01,
            lambda: 0.0001,
            dropout: 0.5,
            adam_delta1: 0.9,
            adam_delta2: 0.999,
            adam_epsilon: 1e-8,
            adam_bias_correction: false,
            hidden_dims: vec![500, 250, 100],
            csi_error_fraction: 0.1,
            eval_snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            min_bits: 100_000,
            min_errors: 100,
            max_bits: 10_000_000,
            desk_scale: false,
            unit_channels: false,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Laptop-sized preset: a small surface and short training run so the
    /// full pipeline finishes in minutes.
    pub fn apply_desk_preset(&mut self) {
        self.desk_scale = true;
        self.ris_elements = 16;
        self.tx_antennas = 4;
        self.frame_len = 16;
        self.train_samples = 30_000;
        self.max_epochs = 60;
        self.patience = 10;
        self.eval_snr_db = vec![10.0, 15.0, 20.0];
        self.min_bits = 200_000;
        self.max_bits = 2_000_000;
    }

    /// Applies one `key = value` assignment.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "modulation_order" => self.modulation_order = parse_num(key, v)?,
            "tx_antennas" => self.tx_antennas = parse_num(key, v)?,
            "ris_elements" => self.ris_elements = parse_num(key, v)?,
            "fading" => {
                self.fading = match v.to_ascii_lowercase().as_str() {
                    "rayleigh" => FadingKind::Rayleigh,
                    "nakagami" => FadingKind::Nakagami,
                    _ => {
                        return Err(ConfigError::InvalidValue {
                            key: key.into(),
                            value: v.into(),
                            reason: "expected 'rayleigh' or 'nakagami'".into(),
                        })
                    }
                }
            }
            "nakagami_m" => self.nakagami_m = parse_num(key, v)?,
            "nakagami_omega" => self.nakagami_omega = parse_num(key, v)?,
            "unit_pathloss" => self.unit_pathloss = parse_bool(key, v)?,
            "distance" => self.distance = parse_num(key, v)?,
            "power_budget" => self.power_budget = parse_num(key, v)?,
            "frame_len" => self.frame_len = parse_num(key, v)?,
            "snr_min_db" => self.snr_min_db = parse_num(key, v)?,
            "snr_max_db" => self.snr_max_db = parse_num(key, v)?,
            "train_samples" => self.train_samples = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "max_epochs" => self.max_epochs = parse_num(key, v)?,
            "patience" => self.patience = parse_num(key, v)?,
            "improvement_tol" => self.improvement_tol = parse_num(key, v)?,
            "validation_split" => self.validation_split = parse_num(key, v)?,
            "learning_rate" => self.learning_rate = parse_num(key, v)?,
            "lambda" => self.lambda = parse_num(key, v)?,
            "dropout" => self.dropout = parse_num(key, v)?,
            "adam_delta1" => self.adam_delta1 = parse_num(key, v)?,
            "adam_delta2" => self.adam_delta2 = parse_num(key, v)?,
            "adam_epsilon" => self.adam_epsilon = parse_num(key, v)?,
            "adam_bias_correction" => self.adam_bias_correction = parse_bool(key, v)?,
            "hidden_dims" => self.hidden_dims = parse_list(key, v)?,
            "csi_error_fraction" => self.csi_error_fraction = parse_num(key, v)?,
            "eval_snr_db" => self.eval_snr_db = parse_list(key, v)?,
            "min_bits" => self.min_bits = parse_num(key, v)?,
            "min_errors" => self.min_errors = parse_num(key, v)?,
            "max_bits" => self.max_bits = parse_num(key, v)?,
            "desk_scale" => self.desk_scale = parse_bool(key, v)?,
            "unit_channels" => self.unit_channels = parse_bool(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Checks every field; errors name the offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, ok: bool| -> Result<(), ConfigError> {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Constraint {
                    key: key.into(),
                    reason: "must be positive".into(),
                })
            }
        };
        if self.modulation_order != 4 {
            return Err(ConfigError::Constraint {
                key: "modulation_order".into(),
                reason: "only 4-QAM is implemented".into(),
            });
        }
        positive("tx_antennas", self.tx_antennas >= 1)?;
        positive("ris_elements", self.ris_elements >= 1)?;
        positive("frame_len", self.frame_len >= 1)?;
        positive("train_samples", self.train_samples >= 1)?;
        positive("batch_size", self.batch_size >= 1)?;
        positive("max_epochs", self.max_epochs >= 1)?;
        positive("patience", self.patience >= 1)?;
        positive("distance", self.distance > 0.0)?;
        positive("power_budget", self.power_budget > 0.0)?;
        if self.fading == FadingKind::Nakagami {
            if !(self.nakagami_m >= 0.5) {
                return Err(ConfigError::Constraint {
                    key: "nakagami_m".into(),
                    reason: "must be >= 0.5".into(),
                });
            }
            positive("nakagami_omega", self.nakagami_omega > 0.0)?;
        }
        if self.snr_min_db > self.snr_max_db {
            return Err(ConfigError::Constraint {
                key: "snr_min_db".into(),
                reason: format!("exceeds snr_max_db {}", self.snr_max_db),
            });
        }
        if !(0.0 < self.validation_split && self.validation_split < 1.0) {
            return Err(ConfigError::Constraint {
                key: "validation_split".into(),
                reason: "must lie in (0, 1)".into(),
            });
        }
        if !(self.learning_rate > 0.0) {
            return Err(ConfigError::Constraint {
                key: "learning_rate".into(),
                reason: "must be positive".into(),
            });
        }
        if self.lambda < 0.0 {
            return Err(ConfigError::Constraint {
                key: "lambda".into(),
                reason: "must be >= 0".into(),
            });
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError::Constraint {
                key: "dropout".into(),
                reason: "must lie in [0, 1)".into(),
            });
        }
        if self.improvement_tol < 0.0 {
            return Err(ConfigError::Constraint {
                key: "improvement_tol".into(),
                reason: "must be >= 0".into(),
            });
        }
        for (key, d) in [
            ("adam_delta1", self.adam_delta1),
            ("adam_delta2", self.adam_delta2),
        ] {
            if !(0.0..1.0).contains(&d) {
                return Err(ConfigError::Constraint {
                    key: key.into(),
                    reason: "must lie in [0, 1)".into(),
                });
            }
        }
        positive("adam_epsilon", self.adam_epsilon > 0.0)?;
        if self.hidden_dims.is_empty() || self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(ConfigError::Constraint {
                key: "hidden_dims".into(),
                reason: "must be a non-empty list of positive widths".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.csi_error_fraction) {
            return Err(ConfigError::Constraint {
                key: "csi_error_fraction".into(),
                reason: "must lie in [0, 1]".into(),
            });
        }
        if self.eval_snr_db.is_empty() || self.eval_snr_db.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConfigError::Constraint {
                key: "eval_snr_db".into(),
                reason: "must be a strictly increasing list".into(),
            });
        }
        positive("min_bits", self.min_bits >= 1)?;
        if self.max_bits < self.min_bits {
            return Err(ConfigError::Constraint {
                key: "max_bits".into(),
                reason: format!("must be >= min_bits {}", self.min_bits),
            });
        }
        Ok(())
    }

    /// Pathloss power gain under the current settings (1.0 when bypassed).
    pub fn pathloss_gain(&self) -> f64 {
        if self.unit_pathloss {
            1.0
        } else {
            pathloss(self.distance).expect("validated distance")
        }
    }

    /// The configured fading law.
    pub fn fading_model(&self) -> FadingModel {
        match self.fading {
            FadingKind::Rayleigh => FadingModel::Rayleigh,
            FadingKind::Nakagami => FadingModel::nakagami(self.nakagami_m, self.nakagami_omega)
                .expect("validated nakagami parameters"),
        }
    }

    /// Receiver-side CSI quality for imperfect-CSI scenarios.
    pub fn csi_quality(&self) -> CsiQuality {
        CsiQuality::from_error_fraction(self.csi_error_fraction).expect("validated fraction")
    }

    /// Dataset-synthesis parameters.
    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            ris_elements: self.ris_elements,
            tx_antennas: self.tx_antennas,
            frame_len: self.frame_len,
            modulation_order: self.modulation_order,
            snr_min_db: self.snr_min_db,
            snr_max_db: self.snr_max_db,
            fading: self.fading_model(),
            pathloss_gain: self.pathloss_gain(),
            power_budget: self.power_budget,
            unit_channels: self.unit_channels,
        }
    }

    /// Training-loop parameters.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            learning_rate: self.learning_rate,
            lambda: self.lambda,
            dropout: self.dropout,
            validation_fraction: self.validation_split,
            patience: self.patience,
            improvement_tol: self.improvement_tol,
            seed: self.seed,
            hidden_dims: self.hidden_dims.clone(),
            adam_delta1: self.adam_delta1,
            adam_delta2: self.adam_delta2,
            adam_epsilon: self.adam_epsilon,
            adam_bias_correction: self.adam_bias_correction,
        }
    }

    /// BER measurement stop rule.
    pub fn stop_rule(&self) -> StopRule {
        StopRule {
            min_bits: self.min_bits,
            min_errors: self.min_errors,
            max_bits: self.max_bits,
        }
    }

    /// Sorted `key=value` lines; the canonical rendering behind [`Self::digest`].
    pub fn canonical_lines(&self) -> Vec<String> {
        let join_usize = |v: &[usize]| {
            v.iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let join_f64 = |v: &[f64]| {
            v.iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut lines = vec![
            format!("adam_bias_correction={}", self.adam_bias_correction),
            format!("adam_delta1={}", self.adam_delta1),
            format!("adam_delta2={}", self.adam_delta2),
            format!("adam_epsilon={}", self.adam_epsilon),
            format!("batch_size={}", self.batch_size),
            format!("csi_error_fraction={}", self.csi_error_fraction),
            format!("desk_scale={}", self.desk_scale),
            format!("distance={}", self.distance),
            format!("dropout={}", self.dropout),
            format!("eval_snr_db={}", join_f64(&self.eval_snr_db)),
            format!(
                "fading={}",
                match self.fading {
                    FadingKind::Rayleigh => "rayleigh",
                    FadingKind::Nakagami => "nakagami",
                }
            ),
            format!("frame_len={}", self.frame_len),
            format!("hidden_dims={}", join_usize(&self.hidden_dims)),
            format!("improvement_tol={}", self.improvement_tol),
            format!("lambda={}", self.lambda),
            format!("learning_rate={}", self.learning_rate),
            format!("max_bits={}", self.max_bits),
            format!("max_epochs={}", self.max_epochs),
            format!("min_bits={}", self.min_bits),
            format!("min_errors={}", self.min_errors),
            format!("modulation_order={}", self.modulation_order),
            format!("nakagami_m={}", self.nakagami_m),
            format!("nakagami_omega={}", self.nakagami_omega),
            format!("patience={}", self.patience),
            format!("power_budget={}", self.power_budget),
            format!("ris_elements={}", self.ris_elements),
            format!("seed={}", self.seed),
            format!("snr_max_db={}", self.snr_max_db),
            format!("snr_min_db={}", self.snr_min_db),
            format!("train_samples={}", self.train_samples),
            format!("tx_antennas={}", self.tx_antennas),
            format!("unit_channels={}", self.unit_channels),
            format!("unit_pathloss={}", self.unit_pathloss),
            format!("validation_split={}", self.validation_split),
        ];
        lines.sort();
        lines
    }

    /// FNV-1a digest of the canonical rendering.
    pub fn digest(&self) -> u64 {
        let mut text = String::new();
        for line in self.canonical_lines() {
            let _ = writeln!(text, "{line}");
        }
        fnv1a64(text.as_bytes())
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::InvalidValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::InvalidValue {
            key: key.into(),
            value: value.into(),
            reason: "expected a boolean".into(),
        }),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

/// Reads `key = value` pairs from a config file, in order.
pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or(ConfigError::MalformedLine { line: i + 1 })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Resolves a configuration from an optional file plus flag overrides.
///
/// Flags override file values, file values override the environment seed
/// and the paper defaults. A `desk_scale = true` anywhere applies the desk
/// preset first, so explicitly set keys always win over the preset.
pub fn parse_config(
    file: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<RunConfig, ConfigError> {
    let file_pairs = match file {
        Some(p) => read_config_file(p)?,
        None => Vec::new(),
    };
    // pre-scan for the resolved desk_scale value (last assignment wins)
    let mut desk = false;
    for (k, v) in file_pairs.iter().chain(overrides) {
        if k == "desk_scale" {
            desk = parse_bool(k, v)?;
        }
    }
    let mut cfg = RunConfig::default();
    if desk {
        cfg.apply_desk_preset();
    }
    if let Ok(seed) = std::env::var(SEED_ENV_VAR) {
        cfg.seed = parse_num(SEED_ENV_VAR, seed.trim())?;
    }
    for (k, v) in file_pairs.iter().chain(overrides) {
        cfg.apply_kv(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// 64-bit FNV-1a hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Writes `bytes` to `path` atomically: a temp file in the same directory
/// is renamed over the target once fully written.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp.partial");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}
