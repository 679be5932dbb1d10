//! Core library for detecting atypical life events from wearable-sensor
//! time series and estimating their effects on daily self-reports.
//!
//! The pipeline, end to end:
//!
//! 1. [`ingest`] parses participant-day records (heart rate + step signals,
//!    daily surveys), resamples them onto a fixed grid, filters low-compliance
//!    data, and z-normalizes channels.
//! 2. [`hmm`] fits a shared-state autoregressive HMM across all days, so the
//!    same state id means the same dynamics for every participant, and decodes
//!    each day into a state sequence.
//! 3. [`embed`] turns each decoded day into the stationary distribution of its
//!    empirical transition matrix, plus a per-person centroid.
//! 4. [`features`] builds the aggregated-statistics baseline (windowed summary
//!    stats + mRMR selection).
//! 5. [`classify`] trains the classifier zoo on either feature family.
//! 6. [`evaluate`] runs cross-validated detection tasks and computes metrics.
//! 7. [`causal`] estimates difference-in-difference effects of events on
//!    stress, anxiety, and affect.
//! 8. [`synth`] generates synthetic cohorts with known ground truth, used to
//!    validate every stage above.
//!
//! Stages communicate through files; [`pipeline`] holds the stage drivers the
//! CLI wraps.

pub mod data;
pub mod embed;
pub mod error;
pub mod hmm;
pub mod ingest;
pub mod mathx;
pub mod util;

pub use error::{Error, Result};

/// Version tag embedded in every serialized artifact.
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
