//! DeepRIS: a link-level simulator and detector benchmark for downlinks
//! assisted by a reconfigurable intelligent surface (RIS).
//!
//! The crate simulates a multi-antenna source transmitting 4-QAM symbols
//! through an `N`-element passive reflecting surface towards a
//! single-antenna destination, trains a fully-connected neural detector
//! on channel- and phase-impaired received frames, and benchmarks its
//! bit-error-rate against classical LS, MMSE, and ML detectors under
//! perfect CSI, imperfect CSI, and channel/surface mismatch conditions.
//!
//! Module map:
//! - [`modem`] — 4-QAM constellation, Gray mapping, hard demapping.
//! - [`channel`] — fading realizations, RIS phase configurations,
//!   beamforming, the end-to-end received-signal path and SNR.
//! - [`baselines`] — LS / MMSE / ML detectors with a CSI-error model.
//! - [`neural`] — the multilayer perceptron: forward pass, loss, analytic
//!   backpropagation, dropout, Adam.
//! - [`training`] — dataset synthesis, normalization, the training loop
//!   with validation split and early stopping, checkpoint persistence.
//! - [`eval`] — Monte Carlo BER measurement, scenario suites, the
//!   multiply-count complexity report.
//! - [`config`] — the flat key-value run configuration shared by the CLI.
//!
//! All randomness flows through explicitly seeded, stream-separated
//! generators ([`rng`]), so every simulation is reproducible bit-for-bit
//! from a single master seed.

pub mod baselines;
pub mod channel;
pub mod config;
pub mod eval;
pub mod modem;
pub mod neural;
pub mod rng;
pub mod training;
