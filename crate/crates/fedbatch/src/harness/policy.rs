//! Batch-size control policies under comparison.
//!
//! Every policy maps (round index, observed per-device upload latencies)
//! to per-device integer batch sizes. Only the proposed controller reacts
//! to the observations; the baselines ignore them.

use crate::controller::{decide_round, ControllerState};
use crate::error::Result;
use crate::optimizer::StaticSystem;
use crate::scaling::ScalingLaw;

pub trait BatchPolicy {
    fn name(&self) -> &str;
    /// Per-device batch sizes for this round.
    fn decide(&mut self, round: u64, observed_comm: &[f64]) -> Result<Vec<u64>>;
}

/// Fixed uniform batch size b for every device, every round.
#[derive(Debug, Clone)]
pub struct FixedPolicy {
    name: String,
    per_device: u64,
    devices: usize,
}

pub fn policy_fixed(b: u64, devices: usize) -> FixedPolicy {
    FixedPolicy {
        name: format!("fixed-{b}"),
        per_device: b,
        devices,
    }
}

impl BatchPolicy for FixedPolicy {
    fn name(&self) -> &str {
        &self.name
    }
    fn decide(&mut self, _round: u64, _observed: &[f64]) -> Result<Vec<u64>> {
        Ok(vec![self.per_device; self.devices])
    }
}

/// Exponentially growing uniform batch: min(cap, round(b0 * rho^n)).
#[derive(Debug, Clone)]
pub struct DbflPolicy {
    name: String,
    b0: u64,
    rho: f64,
    cap: u64,
    devices: usize,
}

pub fn policy_dbfl(b0: u64, rho: f64, cap: u64, devices: usize) -> DbflPolicy {
    DbflPolicy {
        name: "dbfl".to_string(),
        b0,
        rho,
        cap,
        devices,
    }
}

impl DbflPolicy {
    pub fn batch_at(&self, round: u64) -> u64 {
        let grown = (self.b0 as f64 * self.rho.powi(round as i32)).round();
        (grown as u64).clamp(1, self.cap)
    }
}

impl BatchPolicy for DbflPolicy {
    fn name(&self) -> &str {
        &self.name
    }
    fn decide(&mut self, round: u64, _observed: &[f64]) -> Result<Vec<u64>> {
        Ok(vec![self.batch_at(round); self.devices])
    }
}

/// Optimal global batch with a uniform per-device split, chosen once from
/// expected latencies; no per-round adaptation.
#[derive(Debug, Clone)]
pub struct UniformOptimalPolicy {
    name: String,
    per_device: u64,
    devices: usize,
    /// The scanned argmin B*_U.
    pub b_star_uniform: u64,
}

/// Exhaustive scan of B in (beta/eps, b_max] minimizing
/// N(B) * max_k (T_k + HW B / (f_k K)).
pub fn policy_uniform_optimal(
    expected: &StaticSystem,
    law: &ScalingLaw,
    b_max: u64,
) -> Result<UniformOptimalPolicy> {
    let k = expected.device_count();
    let hw = expected.params.hw();
    let floor = law.feasible_batch_floor();
    let start = if floor < 1.0 {
        1
    } else {
        floor.floor() as u64 + 1
    };
    let mut best: Option<(f64, u64)> = None;
    for b in start..=b_max {
        let rounds = law.predict_rounds(b)? as f64;
        let latency = expected
            .profiles
            .iter()
            .zip(&expected.comm)
            .map(|(p, &t)| t + hw * b as f64 / (p.compute_speed * k as f64))
            .fold(f64::NEG_INFINITY, f64::max);
        let value = rounds * latency;
        if best.as_ref().is_none_or(|(v, _)| value < *v) {
            best = Some((value, b));
        }
    }
    let (_, b_star) = best.ok_or_else(|| {
        crate::error::Error::EmptyRange(format!(
            "uniform-optimal scan over ({floor}, {b_max}] is empty"
        ))
    })?;
    Ok(UniformOptimalPolicy {
        name: "uniform_optimal".to_string(),
        per_device: ((b_star as f64 / k as f64).round() as u64).max(1),
        devices: k,
        b_star_uniform: b_star,
    })
}

impl BatchPolicy for UniformOptimalPolicy {
    fn name(&self) -> &str {
        &self.name
    }
    fn decide(&mut self, _round: u64, _observed: &[f64]) -> Result<Vec<u64>> {
        Ok(vec![self.per_device; self.devices])
    }
}

/// The channel-aware adaptive controller.
#[derive(Debug, Clone)]
pub struct ProposedPolicy {
    name: String,
    pub state: ControllerState,
}

pub fn policy_proposed(state: ControllerState) -> ProposedPolicy {
    ProposedPolicy {
        name: "proposed".to_string(),
        state,
    }
}

impl BatchPolicy for ProposedPolicy {
    fn name(&self) -> &str {
        &self.name
    }
    fn decide(&mut self, _round: u64, observed: &[f64]) -> Result<Vec<u64>> {
        Ok(decide_round(&self.state, observed)?.per_device)
    }
}
