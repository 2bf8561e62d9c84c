//! Sensing-aided mmWave beam prediction toolkit.
//!
//! The crate is organised bottom-up:
//!
//! * [`beamsim`]: uniform linear array, oversampled beam codebook, geometric
//!   OFDM channel and the per-beam receive power used as ground truth.
//! * [`geodesy`]: WGS-84 UTM projection and the BS-relative min-max
//!   position normalisation fed to the model.
//! * [`dataset`]: synthetic scenarios, sliding-window sequence samples,
//!   seen/unseen challenge splits and the tabular file formats.
//! * [`metrics`]: top-k accuracy, distance-based accuracy (DBA) score,
//!   noise-floor referenced power ratio and the metric correlation study.
//! * [`model`]: two-layer GRU + linear classifier baseline trained with
//!   cross-entropy and Adam, with hand-written backpropagation.
//!
//! Data-parallel inner loops (per-trajectory generation, per-sample metric
//! terms, per-sample gradients) go through [`exec::Exec`]; with the
//! `parallel` feature disabled everything runs sequentially and produces
//! bit-identical results.

pub mod beamsim;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod geodesy;
pub mod metrics;
pub mod model;

pub use error::{Error, ErrorKind, Result};
