//! Latency-minimizing batch-size control for synchronous federated
//! learning with heterogeneous devices.
//!
//! Synchronous FL waits for the slowest device each round, so end-to-end
//! training time is governed by a communication/computation tradeoff:
//! larger global batches sharpen gradient estimates and cut the number of
//! rounds, but lengthen every round. This crate models that tradeoff and
//! solves it:
//!
//! - [`system`]: device profiles, Shannon rates over Rayleigh fading,
//!   per-round and end-to-end latency accounting.
//! - [`scaling`]: the round-batch scaling law N(B) = ceil(alpha /
//!   (epsilon - beta/B)) and least-squares fitting of its parameters.
//! - [`optimizer`]: closed-form optimal global batch size and
//!   latency-equalizing per-device allocation for static channels, with
//!   exhaustive oracles for verification.
//! - [`controller`]: per-round channel-aware adaptation for fast fading.
//! - [`trainer`]: a synthetic quadratic FL task whose smoothness, noise
//!   variance, and minimum are known exactly, for generating (batch,
//!   rounds) samples and checking the convergence bound.
//! - [`harness`]: config-driven policy comparison with seeded,
//!   reproducible CSV traces.
//!
//! The `fedbatch` binary exposes the `fit`, `optimize`, `simulate`, and
//! `oracle` subcommands; the crate's `examples/` directory has one
//! runnable example per capability.
//!
//! ```
//! use fedbatch::scaling::ScalingLaw;
//!
//! let law = ScalingLaw::new(34.5, 23.2, 0.5).unwrap();
//! assert_eq!(law.predict_rounds(100).unwrap(), 129);
//! ```

pub mod controller;
pub mod error;
pub mod harness;
pub mod optimizer;
pub mod scaling;
pub mod system;
pub mod trainer;

pub use error::{Error, Result};
