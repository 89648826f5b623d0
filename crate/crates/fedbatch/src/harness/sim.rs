//! Seeded policy simulation with CSV traces and cross-policy summaries.
//!
//! A run is fully determined by (config, seed). Independent ChaCha streams
//! derived from the seed drive device sampling, channel draws, controller
//! initialization, and trainer noise, so every policy at a given seed faces
//! the same device set and the same channel sequence.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::controller::init_controller_from_expected;
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, Fading, PolicySpec};
use crate::harness::policy::{
    policy_dbfl, policy_fixed, policy_proposed, policy_uniform_optimal, BatchPolicy,
};
use crate::optimizer::{default_b_max, StaticSystem};
use crate::scaling::ScalingLaw;
use crate::system::{draw_channel, expected_comm_latency, observed_comm_latencies, DeviceProfile};
use crate::trainer::{aggregate, local_sgd};

const STREAM_DEVICES: u64 = 0;
const STREAM_CHANNEL: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_TRAINER: u64 = 3;

/// Convergence accounting for a simulated run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimulationMode {
    /// Scaling-law progress credit: round n earns 1/N(B_n); stop at 1.
    Credit,
    /// Ground-truth synthetic training; stop when the running average of
    /// the squared gradient norm reaches the task threshold.
    Trainer,
}

/// One row of a simulation trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub policy: String,
    pub seed: u64,
    pub round: u64,
    pub global_batch: u64,
    pub round_latency: f64,
    pub cumulative_latency: f64,
    /// Cumulative progress credit (nondecreasing).
    pub progress_credit: f64,
}

/// Per-run summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub policy: String,
    pub seed: u64,
    pub rounds: u64,
    pub e2e_latency: f64,
    pub mean_round_latency: f64,
    pub converged: bool,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The channel stream a simulation at `seed` draws from, one
/// [`draw_channel`] call per round. Exposed so external checks can replay
/// the exact channel sequence a run saw.
pub fn channel_rng(seed: u64) -> ChaCha8Rng {
    stream_rng(seed, STREAM_CHANNEL)
}

/// Shared per-seed state: the device draw and the expected upload
/// latencies every policy at this seed sees.
pub struct SeedContext<'a> {
    cfg: &'a ExperimentConfig,
    law: ScalingLaw,
    seed: u64,
    devices: Vec<DeviceProfile>,
    expected_comm: Vec<f64>,
    /// Fixed channel latencies under slow fading.
    slow_comm: Option<Vec<f64>>,
}

impl<'a> SeedContext<'a> {
    pub fn new(cfg: &'a ExperimentConfig, law: ScalingLaw, seed: u64) -> Result<Self> {
        let mut dev_rng = stream_rng(seed, STREAM_DEVICES);
        let devices = cfg.resolve_devices(&mut dev_rng);

        let slow_comm = match cfg.fading {
            Fading::Slow => {
                let mut chan_rng = stream_rng(seed, STREAM_CHANNEL);
                let channel = draw_channel(&devices, &mut chan_rng);
                Some(observed_comm_latencies(&devices, &channel, &cfg.system)?)
            }
            Fading::Fast => None,
        };
        // Under slow fading the constant channel is the long-term statistic.
        let expected_comm = match &slow_comm {
            Some(fixed) => fixed.clone(),
            None => {
                let mut init_rng = stream_rng(seed, STREAM_INIT);
                devices
                    .iter()
                    .map(|p| expected_comm_latency(p, &cfg.system, cfg.n_samples, &mut init_rng))
                    .collect::<Result<Vec<f64>>>()?
            }
        };
        Ok(Self {
            cfg,
            law,
            seed,
            devices,
            expected_comm,
            slow_comm,
        })
    }

    pub fn devices(&self) -> &[DeviceProfile] {
        &self.devices
    }

    pub fn expected_comm(&self) -> &[f64] {
        &self.expected_comm
    }

    /// System view at the expected latencies.
    pub fn expected_system(&self) -> Result<StaticSystem> {
        StaticSystem::new(
            self.cfg.system,
            self.devices.clone(),
            self.expected_comm.clone(),
        )
    }

    fn build_policy(&self, spec: &PolicySpec) -> Result<Box<dyn BatchPolicy>> {
        let k = self.devices.len();
        Ok(match spec {
            PolicySpec::Fixed { b } => Box::new(policy_fixed(*b, k)),
            PolicySpec::Dbfl { b0, rho, cap } => Box::new(policy_dbfl(*b0, *rho, *cap, k)),
            PolicySpec::UniformOptimal => {
                let sys = self.expected_system()?;
                let b_max = self
                    .cfg
                    .b_max
                    .unwrap_or_else(|| default_b_max(&sys, &self.law));
                Box::new(policy_uniform_optimal(&sys, &self.law, b_max)?)
            }
            PolicySpec::Proposed => {
                let state = init_controller_from_expected(
                    self.cfg.system,
                    self.devices.clone(),
                    self.law,
                    self.expected_comm.clone(),
                    self.cfg.b_max,
                )?;
                Box::new(policy_proposed(state))
            }
        })
    }

    /// Simulate one policy at this seed.
    pub fn run(
        &self,
        spec: &PolicySpec,
        mode: SimulationMode,
    ) -> Result<(Vec<TraceRecord>, RunSummary)> {
        let mut policy = self.build_policy(spec)?;
        let name = policy.name().to_string();
        let hw = self.cfg.system.hw();
        let mut chan_rng = stream_rng(self.seed, STREAM_CHANNEL);
        let mut trainer_rng = stream_rng(self.seed, STREAM_TRAINER);

        let (task, threshold) = match mode {
            SimulationMode::Trainer => {
                let section = self.cfg.task_section();
                let threshold = section.threshold.unwrap_or(self.law.epsilon);
                (Some(section.build()?), threshold)
            }
            SimulationMode::Credit => (None, 0.0),
        };
        let mut weights = task.as_ref().map(|t| t.w0.clone());
        let mut norm_sum = 0.0;

        let mut records = Vec::new();
        let mut cumulative_latency = 0.0;
        let mut credit = 0.0;
        let mut converged = false;
        let mut rounds = 0;

        for round in 0..self.cfg.max_rounds {
            let observed = match &self.slow_comm {
                Some(fixed) => fixed.clone(),
                None => {
                    let channel = draw_channel(&self.devices, &mut chan_rng);
                    observed_comm_latencies(&self.devices, &channel, &self.cfg.system)?
                }
            };
            let batches = policy.decide(round, &observed)?;
            let global_batch: u64 = batches.iter().sum();
            if !self.law.is_feasible(global_batch as f64) {
                return Err(Error::PolicyInfeasible {
                    policy: name,
                    round,
                    batch: global_batch,
                    floor: self.law.feasible_batch_floor(),
                });
            }
            let round_latency = self
                .devices
                .iter()
                .zip(&observed)
                .zip(&batches)
                .map(|((p, &t), &b)| t + hw * b as f64 / p.compute_speed)
                .fold(f64::NEG_INFINITY, f64::max);
            cumulative_latency += round_latency;
            credit += 1.0 / self.law.predict_rounds(global_batch)? as f64;
            rounds = round + 1;

            if let (Some(task), Some(w)) = (&task, &mut weights) {
                norm_sum += task.grad_norm_sq(w);
                let locals: Vec<Vec<f64>> = batches
                    .iter()
                    .map(|&b| {
                        local_sgd(
                            task,
                            w,
                            self.cfg.system.local_steps,
                            b.max(1),
                            self.cfg.system.learning_rate,
                            &mut trainer_rng,
                        )
                    })
                    .collect();
                *w = aggregate(&locals, &batches)?;
            }

            records.push(TraceRecord {
                policy: name.clone(),
                seed: self.seed,
                round,
                global_batch,
                round_latency,
                cumulative_latency,
                progress_credit: credit,
            });

            converged = match mode {
                SimulationMode::Credit => credit >= 1.0 - 1e-9,
                SimulationMode::Trainer => norm_sum / rounds as f64 <= threshold,
            };
            if converged {
                break;
            }
        }

        let summary = RunSummary {
            policy: name,
            seed: self.seed,
            rounds,
            e2e_latency: cumulative_latency,
            mean_round_latency: cumulative_latency / rounds.max(1) as f64,
            converged,
        };
        Ok((records, summary))
    }
}

/// Simulate a single policy at one seed.
pub fn run_policy_simulation(
    cfg: &ExperimentConfig,
    law: ScalingLaw,
    spec: &PolicySpec,
    seed: u64,
    mode: SimulationMode,
) -> Result<(Vec<TraceRecord>, RunSummary)> {
    SeedContext::new(cfg, law, seed)?.run(spec, mode)
}

/// Simulate every configured policy at one seed, sharing the device draw
/// and expected-latency estimation.
pub fn run_seed_comparison(
    cfg: &ExperimentConfig,
    law: ScalingLaw,
    seed: u64,
    mode: SimulationMode,
) -> Result<Vec<(Vec<TraceRecord>, RunSummary)>> {
    let ctx = SeedContext::new(cfg, law, seed)?;
    cfg.policies
        .iter()
        .map(|spec| ctx.run(spec, mode))
        .collect()
}

// ---------------------------------------------------------------------------
// Summaries and serialization
// ---------------------------------------------------------------------------

/// Aggregated per-policy comparison row.
#[derive(Debug, Clone, Serialize)]
pub struct PolicyComparison {
    pub policy: String,
    pub mean_e2e_latency: f64,
    pub std_e2e_latency: f64,
    pub mean_rounds: f64,
    /// Mean E2E latency as a percentage of the proposed policy's (or the
    /// first policy's, if proposed was not run).
    pub relative_latency_pct: f64,
    pub seeds: u64,
}

/// Aggregate run summaries by policy, in first-appearance order.
pub fn summarize(summaries: &[RunSummary]) -> Vec<PolicyComparison> {
    let mut order: Vec<String> = Vec::new();
    for s in summaries {
        if !order.contains(&s.policy) {
            order.push(s.policy.clone());
        }
    }
    let mut rows: Vec<PolicyComparison> = order
        .iter()
        .map(|name| {
            let runs: Vec<&RunSummary> = summaries.iter().filter(|s| &s.policy == name).collect();
            let n = runs.len() as f64;
            let mean = runs.iter().map(|s| s.e2e_latency).sum::<f64>() / n;
            let var = if runs.len() > 1 {
                runs.iter()
                    .map(|s| (s.e2e_latency - mean).powi(2))
                    .sum::<f64>()
                    / (n - 1.0)
            } else {
                0.0
            };
            PolicyComparison {
                policy: name.clone(),
                mean_e2e_latency: mean,
                std_e2e_latency: var.sqrt(),
                mean_rounds: runs.iter().map(|s| s.rounds as f64).sum::<f64>() / n,
                relative_latency_pct: 0.0,
                seeds: runs.len() as u64,
            }
        })
        .collect();
    let reference = rows
        .iter()
        .find(|r| r.policy == "proposed")
        .or_else(|| rows.first())
        .map(|r| r.mean_e2e_latency)
        .unwrap_or(f64::NAN);
    for row in &mut rows {
        row.relative_latency_pct = 100.0 * row.mean_e2e_latency / reference;
    }
    rows
}

/// Write trace rows as CSV with the fixed column order
/// `policy,seed,round,B_n,tau_n,cum_latency,credit`.
pub fn write_traces_csv<W: Write>(mut writer: W, records: &[TraceRecord]) -> Result<()> {
    writeln!(writer, "policy,seed,round,B_n,tau_n,cum_latency,credit")?;
    for r in records {
        writeln!(
            writer,
            "{},{},{},{},{},{},{}",
            r.policy,
            r.seed,
            r.round,
            r.global_batch,
            r.round_latency,
            r.cumulative_latency,
            r.progress_credit
        )?;
    }
    Ok(())
}

/// Plain-text comparison table.
pub fn render_comparison(rows: &[PolicyComparison]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<18} {:>6} {:>14} {:>12} {:>12} {:>10}\n",
        "policy", "seeds", "mean E2E [s]", "std E2E [s]", "mean rounds", "rel [%]"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<18} {:>6} {:>14.4} {:>12.4} {:>12.1} {:>10.1}\n",
            r.policy,
            r.seeds,
            r.mean_e2e_latency,
            r.std_e2e_latency,
            r.mean_rounds,
            r.relative_latency_pct
        ));
    }
    out
}
