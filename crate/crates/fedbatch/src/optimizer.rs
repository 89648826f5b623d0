//! Optimal batch-size control under time-invariant (slow-fading) channels.
//!
//! For fixed per-device upload latencies T_k, the minimum per-round latency
//! at global batch B is piecewise:
//!
//!   tau_min(B) = (HW * B + fhat) / fsum     for B >  B_th
//!   tau_min(B) = tau_1b                      for B <= B_th
//!
//! where fsum = sum f_k (aggregate compute capacity), fhat = sum f_k * T_k
//! (the communication/computation coupling factor), tau_1b is the round
//! latency with one batch per device, and B_th is the batch threshold above
//! which latency equilibrium across devices is reachable. Above the
//! threshold the optimal real-valued allocation equalizes every device's
//! latency:
//!
//!   b_k = (f_k / HW) * (tau_min(B) - T_k)
//!
//! Composing tau_min with the round-batch scaling law gives the end-to-end
//! latency, whose continuous surrogate is unimodal with minimizer
//!
//!   B_eps = (beta/eps) * (1 + sqrt(1 + fhat * eps / (HW * beta)))
//!
//! and the optimal global batch is B* = max(B_th, round_by_surrogate(B_eps)).
//!
//! Exhaustive integer oracles for both the per-batch allocation and the
//! global batch sweep live here as well; they exist to verify the closed
//! forms on small instances, not to be fast.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scaling::{ceil_slop, ScalingLaw};
use crate::system::{DeviceProfile, SystemParams};

/// Enumeration guards for the brute-force allocation oracle.
const ORACLE_MAX_DEVICES: usize = 4;
const ORACLE_MAX_BATCH: u64 = 60;

/// A system whose communication latencies are fixed for the whole run.
#[derive(Debug, Clone)]
pub struct StaticSystem {
    pub params: SystemParams,
    pub profiles: Vec<DeviceProfile>,
    /// Fixed upload latency per device, seconds (T_k).
    pub comm: Vec<f64>,
}

impl StaticSystem {
    pub fn new(params: SystemParams, profiles: Vec<DeviceProfile>, comm: Vec<f64>) -> Result<Self> {
        if profiles.is_empty() {
            return Err(Error::EmptyDevices);
        }
        if profiles.len() != comm.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} profiles vs {} comm latencies",
                profiles.len(),
                comm.len()
            )));
        }
        for &t in &comm {
            if t < 0.0 || !t.is_finite() {
                return Err(Error::Domain {
                    name: "comm_latency",
                    value: t,
                    constraint: "must be finite and >= 0",
                });
            }
        }
        Ok(Self {
            params,
            profiles,
            comm,
        })
    }

    pub fn device_count(&self) -> usize {
        self.profiles.len()
    }

    fn hw(&self) -> f64 {
        self.params.hw()
    }

    /// Aggregate computation capacity fsum = sum f_k.
    pub fn aggregate_compute(&self) -> f64 {
        self.profiles.iter().map(|p| p.compute_speed).sum()
    }

    /// Coupling factor fhat = sum f_k * T_k.
    pub fn coupling_factor(&self) -> f64 {
        self.profiles
            .iter()
            .zip(&self.comm)
            .map(|(p, &t)| p.compute_speed * t)
            .sum()
    }

    /// Round latency at one batch per device: max_k (T_k + HW / f_k).
    pub fn tau_single_batch(&self) -> f64 {
        let hw = self.hw();
        self.profiles
            .iter()
            .zip(&self.comm)
            .map(|(p, &t)| t + hw / p.compute_speed)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Un-ceiled batch threshold: sum_k (f_k/HW) * (tau_1b - T_k).
    pub fn batch_threshold_real(&self) -> f64 {
        let hw = self.hw();
        let tau = self.tau_single_batch();
        self.profiles
            .iter()
            .zip(&self.comm)
            .map(|(p, &t)| p.compute_speed / hw * (tau - t))
            .sum()
    }

    /// Batch threshold B_th = sum_k ceil((f_k/HW) * (tau_1b - T_k)).
    ///
    /// Every summand is >= 1 (the straggler contributes exactly 1), so
    /// B_th >= K.
    pub fn batch_threshold(&self) -> u64 {
        let hw = self.hw();
        let tau = self.tau_single_batch();
        self.profiles
            .iter()
            .zip(&self.comm)
            .map(|(p, &t)| ceil_slop(p.compute_speed / hw * (tau - t)).max(1.0) as u64)
            .sum()
    }

    /// Minimum per-round latency at global batch `b`.
    pub fn tau_min(&self, b: u64) -> Result<f64> {
        let k = self.device_count();
        if (b as usize) < k {
            return Err(Error::BatchBelowDeviceCount {
                batch: b,
                devices: k,
            });
        }
        if b > self.batch_threshold() {
            Ok((self.hw() * b as f64 + self.coupling_factor()) / self.aggregate_compute())
        } else {
            Ok(self.tau_single_batch())
        }
    }

    /// Real-valued equilibrium allocation for B above the threshold:
    /// every device's latency equals tau_min(B) and the batches sum to B.
    pub fn equilibrium_allocation(&self, b: u64) -> Result<Vec<f64>> {
        let threshold = self.batch_threshold();
        if b <= threshold {
            return Err(Error::WrongRegime {
                batch: b,
                threshold,
                expected: "sub-threshold",
            });
        }
        let tau = self.tau_min(b)?;
        let hw = self.hw();
        Ok(self
            .profiles
            .iter()
            .zip(&self.comm)
            .map(|(p, &t)| p.compute_speed / hw * (tau - t))
            .collect())
    }

    /// Integer allocation for K <= B <= B_th: one batch each, then greedy
    /// fill of the slack under tau_1b.
    ///
    /// When B exceeds the integer capacity at tau_1b (possible in the
    /// ceiling gap of the threshold), the overflow batches go one each to
    /// the devices where the overshoot is smallest; the resulting latency
    /// stays within HW/min_k f_k of tau_1b.
    pub fn sub_threshold_allocation(&self, b: u64) -> Result<StaticAllocation> {
        let k = self.device_count();
        if (b as usize) < k {
            return Err(Error::BatchBelowDeviceCount {
                batch: b,
                devices: k,
            });
        }
        let threshold = self.batch_threshold();
        if b > threshold {
            return Err(Error::WrongRegime {
                batch: b,
                threshold,
                expected: "equilibrium",
            });
        }
        let hw = self.hw();
        let tau = self.tau_single_batch();
        // per-device capacity at tau_1b (always >= 1)
        let caps: Vec<u64> = self
            .profiles
            .iter()
            .zip(&self.comm)
            .map(|(p, &t)| {
                (p.compute_speed / hw * (tau - t) + CAP_SLOP)
                    .floor()
                    .max(1.0) as u64
            })
            .collect();
        let mut alloc = vec![1u64; k];
        let mut remaining = b - k as u64;
        // fill devices in descending slack, largest first
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&i, &j| {
            let si = caps[i] - 1;
            let sj = caps[j] - 1;
            sj.cmp(&si).then(i.cmp(&j))
        });
        for &i in &order {
            if remaining == 0 {
                break;
            }
            let take = (caps[i] - alloc[i]).min(remaining);
            alloc[i] += take;
            remaining -= take;
        }
        if remaining > 0 {
            // ceiling gap: place one extra batch on the devices with the
            // smallest resulting excess over tau_1b
            let mut excess: Vec<(f64, usize)> = (0..k)
                .map(|i| {
                    let lat =
                        self.comm[i] + hw * (alloc[i] + 1) as f64 / self.profiles[i].compute_speed;
                    (lat - tau, i)
                })
                .collect();
            excess.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            for &(_, i) in excess.iter().take(remaining as usize) {
                alloc[i] += 1;
            }
        }
        let round_latency = self.allocation_round_latency(&alloc);
        Ok(StaticAllocation {
            global_batch: b,
            per_device: alloc,
            round_latency,
        })
    }

    /// Round latency of an integer allocation: max_k (T_k + HW b_k / f_k).
    pub fn allocation_round_latency(&self, per_device: &[u64]) -> f64 {
        let hw = self.hw();
        self.profiles
            .iter()
            .zip(&self.comm)
            .zip(per_device)
            .map(|((p, &t), &b)| t + hw * b as f64 / p.compute_speed)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Integer allocation at global batch `b`: equilibrium above the
    /// threshold, greedy fill below.
    pub fn allocate(&self, b: u64, mode: RoundingMode) -> Result<StaticAllocation> {
        if b > self.batch_threshold() {
            let real = self.equilibrium_allocation(b)?;
            let per_device = integerize_allocation(&real, b, mode);
            let round_latency = self.allocation_round_latency(&per_device);
            Ok(StaticAllocation {
                global_batch: b,
                per_device,
                round_latency,
            })
        } else {
            self.sub_threshold_allocation(b)
        }
    }
}

/// Slack applied when flooring capacities that are mathematically integral.
const CAP_SLOP: f64 = 1e-9;

/// A concrete batch assignment for one round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StaticAllocation {
    pub global_batch: u64,
    pub per_device: Vec<u64>,
    pub round_latency: f64,
}

/// How real-valued allocations become integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundingMode {
    /// Largest-remainder rounding; conserves the global batch exactly.
    /// Equal remainders round the lower device index up.
    #[default]
    Conserve,
    /// Plain nearest-integer rounding; the sum may drift from B.
    Paper,
}

/// Round a real-valued allocation to integers, clamped to >= 1.
///
/// `Conserve` keeps sum b_k = B exactly and moves every entry by less than
/// one; `Paper` rounds each entry independently.
pub fn integerize_allocation(real: &[f64], b: u64, mode: RoundingMode) -> Vec<u64> {
    match mode {
        RoundingMode::Paper => real.iter().map(|&x| x.round().max(1.0) as u64).collect(),
        RoundingMode::Conserve => {
            let floors: Vec<u64> = real.iter().map(|&x| x.floor().max(1.0) as u64).collect();
            let assigned: u64 = floors.iter().sum();
            let mut alloc = floors;
            if assigned < b {
                let mut remainders: Vec<(f64, usize)> = real
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| (x - x.floor(), i))
                    .collect();
                // largest remainder first; ties round the lower index up
                remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
                for &(_, i) in remainders.iter().take((b - assigned) as usize) {
                    alloc[i] += 1;
                }
            } else if assigned > b {
                // only reachable when clamping lifted sub-unit entries
                let mut surplus = assigned - b;
                while surplus > 0 {
                    let mut donor = 0usize;
                    for (i, &v) in alloc.iter().enumerate() {
                        if v > alloc[donor] {
                            donor = i;
                        }
                    }
                    assert!(alloc[donor] > 1, "conservation repair needs a donor device");
                    alloc[donor] -= 1;
                    surplus -= 1;
                }
            }
            alloc
        }
    }
}

// ---------------------------------------------------------------------------
// End-to-end latency and its surrogate
// ---------------------------------------------------------------------------

/// Continuous end-to-end latency surrogate psi~(B).
///
/// Piecewise around the un-ceiled threshold; strictly decreasing below
/// B_eps and increasing above it.
pub fn surrogate_e2e(sys: &StaticSystem, law: &ScalingLaw, b: f64) -> Result<f64> {
    if !law.is_feasible(b) {
        return Err(Error::InfeasibleBatch {
            batch: b,
            floor: law.feasible_batch_floor(),
        });
    }
    let denom = law.epsilon * b - law.beta;
    if b > sys.batch_threshold_real() {
        let hw = sys.hw();
        Ok(law.alpha * b * (hw * b + sys.coupling_factor()) / (sys.aggregate_compute() * denom))
    } else {
        Ok(law.alpha * b * sys.tau_single_batch() / denom)
    }
}

/// Exact end-to-end latency at integer B: N(B) * tau_min(B).
pub fn exact_e2e(sys: &StaticSystem, law: &ScalingLaw, b: u64) -> Result<f64> {
    let rounds = law.predict_rounds(b)?;
    Ok(rounds as f64 * sys.tau_min(b)?)
}

/// Result of the closed-form global batch optimization.
#[derive(Debug, Clone, Serialize)]
pub struct OptimalBatch {
    #[serde(rename = "B_star")]
    pub b_star: u64,
    #[serde(rename = "b_k")]
    pub per_device: Vec<u64>,
    pub tau_round: f64,
    #[serde(rename = "N_rounds")]
    pub rounds: u64,
    /// rounds * realized integer round latency.
    pub e2e_seconds: f64,
    /// True when the returned batch was clipped to `b_max`.
    pub capped: bool,
    /// Continuous surrogate minimizer B_eps before rounding.
    pub b_epsilon: f64,
}

/// Continuous surrogate minimizer B_eps; zero in the degenerate beta = 0
/// case (the surrogate is then minimized by the threshold itself).
pub fn continuous_optimum(sys: &StaticSystem, law: &ScalingLaw) -> f64 {
    if law.beta == 0.0 {
        return 0.0;
    }
    let hw = sys.hw();
    law.beta / law.epsilon
        * (1.0 + (1.0 + sys.coupling_factor() * law.epsilon / (hw * law.beta)).sqrt())
}

/// Default search cap: 10 * ceil(B_eps), raised to the smallest feasible
/// batch when necessary. The cap may bind when the batch threshold is
/// enormous (e.g. tail-inflated expected latencies); the binding is
/// reported via [`OptimalBatch::capped`].
pub fn default_b_max(sys: &StaticSystem, law: &ScalingLaw) -> u64 {
    let b_eps = continuous_optimum(sys, law);
    let base = (10.0 * b_eps.ceil()).max(1.0) as u64;
    base.max(min_feasible_batch(sys, law))
}

/// Smallest integer batch that satisfies both B >= K and B > beta/epsilon.
fn min_feasible_batch(sys: &StaticSystem, law: &ScalingLaw) -> u64 {
    let floor = law.feasible_batch_floor();
    let above_floor = if floor < 1.0 {
        1
    } else {
        floor.floor() as u64 + 1
    };
    above_floor.max(sys.device_count() as u64)
}

/// Closed-form optimal global batch size with its integer allocation.
///
/// B* = max(B_th, round_by_surrogate(B_eps)), clipped to `b_max` (default
/// [`default_b_max`]) with the cap reported.
pub fn optimal_global_batch(
    sys: &StaticSystem,
    law: &ScalingLaw,
    b_max: Option<u64>,
) -> Result<OptimalBatch> {
    let b_eps = continuous_optimum(sys, law);
    let b_max = b_max.unwrap_or_else(|| default_b_max(sys, law));
    let min_feasible = min_feasible_batch(sys, law);
    if b_max < min_feasible {
        return Err(Error::EmptyRange(format!(
            "b_max {} below the smallest feasible batch {}",
            b_max, min_feasible
        )));
    }

    // round B_eps by surrogate value: floor wins ties
    let rounded = if law.beta == 0.0 {
        0
    } else {
        let lo = b_eps.floor();
        let hi = b_eps.ceil();
        if lo >= 1.0 && law.is_feasible(lo) {
            let psi_lo = surrogate_e2e(sys, law, lo)?;
            let psi_hi = surrogate_e2e(sys, law, hi)?;
            if psi_lo <= psi_hi {
                lo as u64
            } else {
                hi as u64
            }
        } else {
            hi as u64
        }
    };

    let mut b_star = rounded.max(sys.batch_threshold()).max(min_feasible);
    let capped = b_star > b_max;
    if capped {
        b_star = b_max;
    }

    let allocation = sys.allocate(b_star, RoundingMode::Conserve)?;
    let rounds = law.predict_rounds(b_star)?;
    Ok(OptimalBatch {
        b_star,
        per_device: allocation.per_device.clone(),
        tau_round: allocation.round_latency,
        rounds,
        e2e_seconds: rounds as f64 * allocation.round_latency,
        capped,
        b_epsilon: b_eps,
    })
}

// ---------------------------------------------------------------------------
// Brute-force oracles
// ---------------------------------------------------------------------------

/// Exhaustive optimal integer allocation of `b` batches over the devices.
///
/// Enumerates every composition of b into K parts >= 1 and keeps the one
/// with the smallest round latency (first found wins ties). Refuses
/// instances beyond K = 4 or B = 60.
pub fn brute_force_allocation(sys: &StaticSystem, b: u64) -> Result<StaticAllocation> {
    let k = sys.device_count();
    if k > ORACLE_MAX_DEVICES || b > ORACLE_MAX_BATCH {
        return Err(Error::InstanceTooLarge(format!(
            "K = {} (max {}), B = {} (max {})",
            k, ORACLE_MAX_DEVICES, b, ORACLE_MAX_BATCH
        )));
    }
    if (b as usize) < k {
        return Err(Error::BatchBelowDeviceCount {
            batch: b,
            devices: k,
        });
    }
    let mut best: Option<(f64, Vec<u64>)> = None;
    let mut current = vec![1u64; k];
    enumerate_compositions(sys, b, 0, &mut current, &mut best);
    let (round_latency, per_device) = best.expect("at least one composition exists");
    Ok(StaticAllocation {
        global_batch: b,
        per_device,
        round_latency,
    })
}

fn enumerate_compositions(
    sys: &StaticSystem,
    b: u64,
    idx: usize,
    current: &mut Vec<u64>,
    best: &mut Option<(f64, Vec<u64>)>,
) {
    let k = sys.device_count();
    let assigned: u64 = current[..idx].iter().sum();
    let remaining = b - assigned;
    if idx == k - 1 {
        current[idx] = remaining;
        let latency = sys.allocation_round_latency(current);
        if best.as_ref().is_none_or(|(l, _)| latency < *l) {
            *best = Some((latency, current.clone()));
        }
        return;
    }
    let tail = (k - 1 - idx) as u64; // devices after this one need >= 1 each
    for v in 1..=(remaining - tail) {
        current[idx] = v;
        enumerate_compositions(sys, b, idx + 1, current, best);
    }
}

/// Exhaustive argmin of the exact end-to-end latency over an integer batch
/// range. Small instances use the brute-force allocation; larger ones the
/// equilibrium tau_min.
pub fn brute_force_global_batch(
    sys: &StaticSystem,
    law: &ScalingLaw,
    range: std::ops::RangeInclusive<u64>,
) -> Result<u64> {
    let k = sys.device_count() as u64;
    let mut best: Option<(f64, u64)> = None;
    for b in range.clone() {
        if b < k || !law.is_feasible(b as f64) {
            continue;
        }
        let tau = if sys.device_count() <= ORACLE_MAX_DEVICES && b <= ORACLE_MAX_BATCH {
            brute_force_allocation(sys, b)?.round_latency
        } else {
            sys.tau_min(b)?
        };
        let value = law.predict_rounds(b)? as f64 * tau;
        if best.as_ref().is_none_or(|(v, _)| value < *v) {
            best = Some((value, b));
        }
    }
    best.map(|(_, b)| b).ok_or_else(|| {
        Error::EmptyRange(format!(
            "no batch in [{}, {}] satisfies B >= {} and B > {}",
            range.start(),
            range.end(),
            k,
            law.feasible_batch_floor()
        ))
    })
}
