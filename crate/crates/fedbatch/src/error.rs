//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model evaluation, fitting, optimization, and the
/// simulation harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A physical quantity violated its domain (e.g. non-positive gain).
    #[error("invalid {name}: {value} ({constraint})")]
    Domain {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },

    /// An operation over devices was called with an empty device set.
    #[error("empty device set")]
    EmptyDevices,

    /// The scaling law is undefined at this batch size (B must exceed beta/epsilon).
    #[error("global batch {batch} infeasible: scaling law requires B > {floor}")]
    InfeasibleBatch { batch: f64, floor: f64 },

    /// Every device needs at least one sample per round.
    #[error("global batch {batch} below device count {devices}")]
    BatchBelowDeviceCount { batch: u64, devices: usize },

    /// The batch size falls in the other branch of the piecewise latency model.
    #[error("batch {batch} is in the {expected} regime (threshold {threshold})")]
    WrongRegime {
        batch: u64,
        threshold: u64,
        expected: &'static str,
    },

    /// Curve fitting needs at least two samples with distinct batch sizes.
    #[error("fit underdetermined: need >= 2 samples with distinct global batch sizes")]
    Underdetermined,

    /// Exhaustive enumeration refused: instance exceeds the oracle bounds.
    #[error("brute-force instance too large: {0}")]
    InstanceTooLarge(String),

    /// No feasible batch size exists in the requested range.
    #[error("no feasible batch size in range: {0}")]
    EmptyRange(String),

    /// Vector arguments disagree on length.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A policy asked for a global batch the scaling law cannot support.
    #[error(
        "policy {policy} produced infeasible global batch {batch} at round {round}: \
         scaling law requires B > {floor}"
    )]
    PolicyInfeasible {
        policy: String,
        round: u64,
        batch: u64,
        floor: f64,
    },

    /// Configuration file violated an invariant; `key` names the offending field.
    #[error("config error at {key}: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
