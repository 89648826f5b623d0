//! Physical system model: device profiles, wireless rates, and latency accounting.
//!
//! A synchronous FL round has two latency components per device:
//!
//!   T_cmp = H * W * b / f        (compute: H local steps, W FLOPs/sample, speed f)
//!   T_cmm = q / R                (upload: payload q bits at Shannon rate R)
//!
//! with R = B_W * log2(1 + P * g / (B_W * N0)) on an OFDMA sub-band of
//! bandwidth B_W. The round latency is the straggler's combined latency,
//! and end-to-end latency is the sum over rounds.
//!
//! Channel power gains are exponential with mean sigma_k^2 (the power gain
//! of a Rayleigh amplitude); draws are reproducible given the caller's RNG.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shared system constants, all in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    /// OFDMA sub-band bandwidth per device, Hz (B_W).
    pub bandwidth_per_device: f64,
    /// Noise power spectral density, W/Hz (N0).
    pub noise_density: f64,
    /// Quantization bits per model parameter (Q).
    pub bits_per_param: u64,
    /// Number of trainable model parameters (D).
    pub model_dim: u64,
    /// Per-sample computational workload, FLOPs (W).
    pub flops_per_sample: f64,
    /// Local SGD steps per round (H).
    pub local_steps: u32,
    /// Learning rate (eta).
    pub learning_rate: f64,
}

impl SystemParams {
    /// Combined per-sample work of one round, H * W.
    pub fn hw(&self) -> f64 {
        f64::from(self.local_steps) * self.flops_per_sample
    }

    /// Uplink payload size in bits, q = D * Q.
    pub fn payload_bits(&self) -> u64 {
        self.model_dim * self.bits_per_param
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bandwidth_per_device", self.bandwidth_per_device),
            ("noise_density", self.noise_density),
            ("flops_per_sample", self.flops_per_sample),
            ("learning_rate", self.learning_rate),
        ];
        for (name, value) in positive {
            if value <= 0.0 || !value.is_finite() {
                return Err(Error::Domain {
                    name,
                    value,
                    constraint: "must be strictly positive",
                });
            }
        }
        if self.bits_per_param < 1 {
            return Err(Error::Domain {
                name: "bits_per_param",
                value: self.bits_per_param as f64,
                constraint: "must be an integer >= 1",
            });
        }
        if self.model_dim < 1 {
            return Err(Error::Domain {
                name: "model_dim",
                value: self.model_dim as f64,
                constraint: "must be an integer >= 1",
            });
        }
        if self.local_steps < 1 {
            return Err(Error::Domain {
                name: "local_steps",
                value: f64::from(self.local_steps),
                constraint: "must be >= 1",
            });
        }
        Ok(())
    }
}

/// One device's communication/computation capabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    /// Device index within the system.
    #[serde(default)]
    pub id: usize,
    /// Computation speed, FLOPs/s (f_k).
    pub compute_speed: f64,
    /// Transmit power, W (P_k).
    pub tx_power: f64,
    /// Mean of the exponential channel power-gain distribution (sigma_k^2).
    pub fading_scale: f64,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("compute_speed", self.compute_speed),
            ("tx_power", self.tx_power),
            ("fading_scale", self.fading_scale),
        ];
        for (name, value) in positive {
            if value <= 0.0 || !value.is_finite() {
                return Err(Error::Domain {
                    name,
                    value,
                    constraint: "must be strictly positive",
                });
            }
        }
        Ok(())
    }
}

/// One realization of the per-device channel power gains |h_k|^2.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub gains: Vec<f64>,
}

/// Per-device latency split for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyBreakdown {
    /// Upload latency per device, seconds.
    pub comm: Vec<f64>,
    /// Compute latency per device, seconds.
    pub comp: Vec<f64>,
    /// Straggler latency, max_k (comm_k + comp_k).
    pub round_total: f64,
}

// ---------------------------------------------------------------------------
// Rates and latencies
// ---------------------------------------------------------------------------

/// Shannon rate for one device: B_W * log2(1 + P * g / (B_W * N0)), bits/s.
pub fn transmission_rate(profile: &DeviceProfile, gain: f64, params: &SystemParams) -> Result<f64> {
    if gain <= 0.0 || !gain.is_finite() {
        return Err(Error::Domain {
            name: "gain",
            value: gain,
            constraint: "channel power gain must be strictly positive",
        });
    }
    if profile.tx_power <= 0.0 || !profile.tx_power.is_finite() {
        return Err(Error::Domain {
            name: "tx_power",
            value: profile.tx_power,
            constraint: "must be strictly positive",
        });
    }
    let snr = profile.tx_power * gain / (params.bandwidth_per_device * params.noise_density);
    Ok(params.bandwidth_per_device * (1.0 + snr).log2())
}

/// Uplink payload size in bits, q = D * Q.
pub fn payload_bits(params: &SystemParams) -> u64 {
    params.payload_bits()
}

/// Upload latency: payload / rate, seconds.
pub fn comm_latency(rate: f64, payload: f64) -> Result<f64> {
    if rate <= 0.0 || !rate.is_finite() {
        return Err(Error::Domain {
            name: "rate",
            value: rate,
            constraint: "transmission rate must be strictly positive",
        });
    }
    Ok(payload / rate)
}

/// Compute latency for one round: H * W * batch / f_k, seconds.
///
/// Exactly linear in the batch size.
pub fn comp_latency(profile: &DeviceProfile, batch: u64, params: &SystemParams) -> f64 {
    params.hw() * batch as f64 / profile.compute_speed
}

/// Combine per-device comm and comp latencies into the round latency
/// max_k (comm_k + comp_k).
pub fn per_round_latency(comm: &[f64], comp: &[f64]) -> Result<LatencyBreakdown> {
    if comm.is_empty() {
        return Err(Error::EmptyDevices);
    }
    if comm.len() != comp.len() {
        return Err(Error::DimensionMismatch(format!(
            "comm has {} devices, comp has {}",
            comm.len(),
            comp.len()
        )));
    }
    let round_total = comm
        .iter()
        .zip(comp)
        .map(|(&a, &b)| a + b)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(LatencyBreakdown {
        comm: comm.to_vec(),
        comp: comp.to_vec(),
        round_total,
    })
}

/// End-to-end latency: sum of per-round latencies.
pub fn e2e_latency(round_latencies: &[f64]) -> f64 {
    round_latencies.iter().sum()
}

// ---------------------------------------------------------------------------
// Channel draws
// ---------------------------------------------------------------------------

/// Draw one channel realization: gain_k ~ Exponential(mean sigma_k^2),
/// independently per device, in device order.
pub fn draw_channel<R: Rng + ?Sized>(profiles: &[DeviceProfile], rng: &mut R) -> ChannelState {
    let gains = profiles
        .iter()
        .map(|p| draw_gain(p.fading_scale, rng))
        .collect();
    ChannelState { gains }
}

fn draw_gain<R: Rng + ?Sized>(fading_scale: f64, rng: &mut R) -> f64 {
    // Exp::new takes the rate parameter; mean = 1 / rate.
    let exp = Exp::new(1.0 / fading_scale).expect("fading_scale validated positive");
    // Exponential draws are almost surely positive; guard the measure-zero edge.
    exp.sample(rng).max(f64::MIN_POSITIVE)
}

/// Observed comm latencies for one channel realization, one entry per device.
pub fn observed_comm_latencies(
    profiles: &[DeviceProfile],
    channel: &ChannelState,
    params: &SystemParams,
) -> Result<Vec<f64>> {
    if profiles.len() != channel.gains.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} profiles vs {} gains",
            profiles.len(),
            channel.gains.len()
        )));
    }
    let payload = params.payload_bits() as f64;
    profiles
        .iter()
        .zip(&channel.gains)
        .map(|(p, &g)| comm_latency(transmission_rate(p, g, params)?, payload))
        .collect()
}

/// Monte Carlo estimate of the expected upload latency E[q / R] for one
/// device under its fading distribution.
pub fn expected_comm_latency<R: Rng + ?Sized>(
    profile: &DeviceProfile,
    params: &SystemParams,
    n_samples: u64,
    rng: &mut R,
) -> Result<f64> {
    if n_samples < 1 {
        return Err(Error::Domain {
            name: "n_samples",
            value: n_samples as f64,
            constraint: "must be >= 1",
        });
    }
    let payload = params.payload_bits() as f64;
    let mut acc = 0.0;
    for _ in 0..n_samples {
        let gain = draw_gain(profile.fading_scale, rng);
        acc += comm_latency(transmission_rate(profile, gain, params)?, payload)?;
    }
    Ok(acc / n_samples as f64)
}
