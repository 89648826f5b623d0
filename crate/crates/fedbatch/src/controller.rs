//! Channel-adaptive batch-size control for fast-fading rounds.
//!
//! Initialization computes a reference global batch from long-term channel
//! statistics: the expected upload latencies feed the slow-fading optimizer,
//! yielding B_ref. Each round then observes the realized latencies, computes
//! the channel-aware threshold
//!
//!   B_th(n) = sum_k ceil((f_k/HW) * (max_j (T_j(n) + HW/f_j) - T_k(n)))
//!
//! and uses B(n) = max(B_ref, B_th(n)). Raising B to the threshold does not
//! lengthen the round - the straggler already dictates it - while the extra
//! samples buy convergence progress. The per-device split follows the
//! latency-equilibrium rule at the observed latencies.

use rand::Rng;

use crate::error::{Error, Result};
use crate::optimizer::{integerize_allocation, optimal_global_batch, RoundingMode, StaticSystem};
use crate::scaling::ScalingLaw;
use crate::system::{expected_comm_latency, DeviceProfile, SystemParams};

/// Immutable controller state built at initialization.
#[derive(Debug, Clone)]
pub struct ControllerState {
    /// Reference global batch size from channel statistics (B_ref).
    pub reference_batch: u64,
    /// Batch threshold at the expected latencies.
    pub expected_threshold: u64,
    pub law: ScalingLaw,
    pub params: SystemParams,
    pub profiles: Vec<DeviceProfile>,
    /// Expected upload latency per device, seconds.
    pub expected_comm: Vec<f64>,
}

/// One round's batch decision.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundDecision {
    /// Adaptive global batch B(n) = max(B_ref, B_th(n)).
    pub global_batch: u64,
    pub per_device: Vec<u64>,
    /// Round latency of the integer allocation at the observed latencies.
    pub round_latency: f64,
    /// Channel-aware threshold B_th(n) used in the max.
    pub threshold_used: u64,
}

/// Build controller state from explicit expected latencies.
pub fn init_controller_from_expected(
    params: SystemParams,
    profiles: Vec<DeviceProfile>,
    law: ScalingLaw,
    expected_comm: Vec<f64>,
    b_max: Option<u64>,
) -> Result<ControllerState> {
    let sys = StaticSystem::new(params, profiles, expected_comm)?;
    let opt = optimal_global_batch(&sys, &law, b_max)?;
    let expected_threshold = sys.batch_threshold();
    Ok(ControllerState {
        reference_batch: opt.b_star,
        expected_threshold,
        law,
        params: sys.params,
        profiles: sys.profiles,
        expected_comm: sys.comm,
    })
}

/// Build controller state by Monte Carlo estimation of the expected upload
/// latency per device (`n_samples` draws each).
pub fn init_controller<R: Rng + ?Sized>(
    params: SystemParams,
    profiles: Vec<DeviceProfile>,
    law: ScalingLaw,
    n_samples: u64,
    rng: &mut R,
    b_max: Option<u64>,
) -> Result<ControllerState> {
    let expected_comm = profiles
        .iter()
        .map(|p| expected_comm_latency(p, &params, n_samples, rng))
        .collect::<Result<Vec<f64>>>()?;
    init_controller_from_expected(params, profiles, law, expected_comm, b_max)
}

/// Channel-aware batch threshold at arbitrary observed latencies.
pub fn channel_aware_threshold(
    params: &SystemParams,
    profiles: &[DeviceProfile],
    observed_comm: &[f64],
) -> u64 {
    let hw = params.hw();
    let tau_1b = profiles
        .iter()
        .zip(observed_comm)
        .map(|(p, &t)| t + hw / p.compute_speed)
        .fold(f64::NEG_INFINITY, f64::max);
    profiles
        .iter()
        .zip(observed_comm)
        .map(|(p, &t)| {
            crate::scaling::ceil_slop(p.compute_speed / hw * (tau_1b - t)).max(1.0) as u64
        })
        .sum()
}

/// Threshold B_th(n) for this round's observed latencies.
pub fn round_threshold(state: &ControllerState, observed_comm: &[f64]) -> u64 {
    channel_aware_threshold(&state.params, &state.profiles, observed_comm)
}

/// Decide the round's global batch and per-device allocation from the
/// observed upload latencies.
pub fn decide_round(state: &ControllerState, observed_comm: &[f64]) -> Result<RoundDecision> {
    if observed_comm.len() != state.profiles.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} observed latencies vs {} devices",
            observed_comm.len(),
            state.profiles.len()
        )));
    }
    let threshold = round_threshold(state, observed_comm);
    let global_batch = state.reference_batch.max(threshold);

    let hw = state.params.hw();
    let f_sum: f64 = state.profiles.iter().map(|p| p.compute_speed).sum();
    let f_hat: f64 = state
        .profiles
        .iter()
        .zip(observed_comm)
        .map(|(p, &t)| p.compute_speed * t)
        .sum();
    let tau = (hw * global_batch as f64 + f_hat) / f_sum;
    let real: Vec<f64> = state
        .profiles
        .iter()
        .zip(observed_comm)
        .map(|(p, &t)| p.compute_speed / hw * (tau - t))
        .collect();
    let per_device = integerize_allocation(&real, global_batch, RoundingMode::Conserve);

    let round_latency = state
        .profiles
        .iter()
        .zip(observed_comm)
        .zip(&per_device)
        .map(|((p, &t), &b)| t + hw * b as f64 / p.compute_speed)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(RoundDecision {
        global_batch,
        per_device,
        round_latency,
        threshold_used: threshold,
    })
}

/// Real-valued equilibrium allocation at the observed latencies; exposed
/// for invariant checks.
pub fn equilibrium_at_observed(
    state: &ControllerState,
    global_batch: u64,
    observed_comm: &[f64],
) -> Vec<f64> {
    let hw = state.params.hw();
    let f_sum: f64 = state.profiles.iter().map(|p| p.compute_speed).sum();
    let f_hat: f64 = state
        .profiles
        .iter()
        .zip(observed_comm)
        .map(|(p, &t)| p.compute_speed * t)
        .sum();
    let tau = (hw * global_batch as f64 + f_hat) / f_sum;
    state
        .profiles
        .iter()
        .zip(observed_comm)
        .map(|(p, &t)| p.compute_speed / hw * (tau - t))
        .collect()
}

/// Serialize a sequence of round decisions as CSV with columns
/// `round,B_th,B_star,tau,b_1,...,b_K`.
pub fn write_decision_log<W: std::io::Write>(
    mut writer: W,
    decisions: &[(u64, RoundDecision)],
) -> Result<()> {
    let k = decisions.first().map_or(0, |(_, d)| d.per_device.len());
    write!(writer, "round,B_th,B_star,tau")?;
    for i in 1..=k {
        write!(writer, ",b_{i}")?;
    }
    writeln!(writer)?;
    for (round, d) in decisions {
        write!(
            writer,
            "{round},{},{},{}",
            d.threshold_used, d.global_batch, d.round_latency
        )?;
        for b in &d.per_device {
            write!(writer, ",{b}")?;
        }
        writeln!(writer)?;
    }
    Ok(())
}
