//! Experiment configuration: JSON schema, defaults, and validation.
//!
//! Unknown keys are rejected; validation errors name the offending key and
//! the violated constraint. Devices may be listed explicitly or sampled
//! uniformly from ranges with the experiment seed.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::RoundingMode;
use crate::scaling::{fit_scaling_law, read_samples_csv_path, ScalingLaw};
use crate::system::{DeviceProfile, SystemParams};
use crate::trainer::SyntheticTask;

fn default_n_samples() -> u64 {
    10_000
}

/// Channel evolution across rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fading {
    /// One channel draw fixed for the whole run.
    Slow,
    /// Independent channel draw every round.
    Fast,
}

/// Device list: explicit profiles or a sampler over ranges.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeviceSection {
    Explicit(Vec<DeviceProfile>),
    Sampled { sample: DeviceSampler },
}

/// Uniform ranges for sampled device heterogeneity.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSampler {
    pub count: usize,
    /// [low, high] for P_k in watts.
    pub tx_power: [f64; 2],
    /// [low, high] for sigma_k^2.
    pub fading_scale: [f64; 2],
    /// [low, high] for f_k in FLOPs/s.
    pub compute_speed: [f64; 2],
}

/// Scaling law: given directly or fitted from a samples CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LawSection {
    Direct(ScalingLaw),
    Fit { fit_from: PathBuf, epsilon: f64 },
}

/// One benchmark policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    /// Fixed uniform per-device batch size b, every round.
    Fixed { b: u64 },
    /// Exponentially growing uniform batch: min(cap, round(b0 * rho^n)).
    Dbfl {
        b0: u64,
        rho: f64,
        #[serde(default = "default_dbfl_cap")]
        cap: u64,
    },
    /// Optimal global batch with uniform (non-adaptive) per-device split.
    UniformOptimal,
    /// Channel-aware adaptive controller.
    Proposed,
}

fn default_dbfl_cap() -> u64 {
    1024
}

impl PolicySpec {
    pub fn name(&self) -> String {
        match self {
            PolicySpec::Fixed { b } => format!("fixed-{b}"),
            PolicySpec::Dbfl { .. } => "dbfl".to_string(),
            PolicySpec::UniformOptimal => "uniform_optimal".to_string(),
            PolicySpec::Proposed => "proposed".to_string(),
        }
    }
}

/// Synthetic-task settings for trainer-driven simulation and built-in
/// sample generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    #[serde(default = "default_task_dim")]
    pub dim: usize,
    #[serde(default = "default_task_smoothness")]
    pub smoothness: f64,
    #[serde(default = "default_task_noise")]
    pub noise_var: f64,
    #[serde(default)]
    pub f_star: f64,
    #[serde(default = "default_task_w0")]
    pub w0_scale: f64,
    /// Gradient-norm convergence target; defaults to the law's epsilon.
    #[serde(default)]
    pub threshold: Option<f64>,
}

fn default_task_dim() -> usize {
    20
}
fn default_task_smoothness() -> f64 {
    1.0
}
fn default_task_noise() -> f64 {
    4.0
}
fn default_task_w0() -> f64 {
    1.0
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            dim: default_task_dim(),
            smoothness: default_task_smoothness(),
            noise_var: default_task_noise(),
            f_star: 0.0,
            w0_scale: default_task_w0(),
            threshold: None,
        }
    }
}

impl TaskSection {
    pub fn build(&self) -> Result<SyntheticTask> {
        SyntheticTask::ramp(
            self.dim,
            self.smoothness,
            self.noise_var,
            self.f_star,
            self.w0_scale,
        )
    }
}

/// Full experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemParams,
    pub devices: DeviceSection,
    pub law: LawSection,
    pub policies: Vec<PolicySpec>,
    pub seeds: Vec<u64>,
    pub max_rounds: u64,
    pub fading: Fading,
    /// Monte Carlo draws for expected-latency estimation.
    #[serde(default = "default_n_samples")]
    pub n_samples: u64,
    /// Cap for the global batch search; default 10 * ceil(B_eps).
    #[serde(default)]
    pub b_max: Option<u64>,
    #[serde(default)]
    pub rounding: RoundingMode,
    #[serde(default)]
    pub task: Option<TaskSection>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.system.validate().map_err(|e| named(e, "system"))?;
        match &self.devices {
            DeviceSection::Explicit(profiles) => {
                if profiles.is_empty() {
                    return Err(Error::Config {
                        key: "devices".into(),
                        message: "at least one device required".into(),
                    });
                }
                for (i, p) in profiles.iter().enumerate() {
                    p.validate()
                        .map_err(|e| named(e, &format!("devices[{i}]")))?;
                }
            }
            DeviceSection::Sampled { sample } => {
                if sample.count == 0 {
                    return Err(Error::Config {
                        key: "devices.sample.count".into(),
                        message: "must be >= 1".into(),
                    });
                }
                for (key, range) in [
                    ("devices.sample.tx_power", sample.tx_power),
                    ("devices.sample.fading_scale", sample.fading_scale),
                    ("devices.sample.compute_speed", sample.compute_speed),
                ] {
                    if range[0] <= 0.0 || range[1] < range[0] || !range[1].is_finite() {
                        return Err(Error::Config {
                            key: key.into(),
                            message: "range must satisfy 0 < low <= high".into(),
                        });
                    }
                }
            }
        }
        match &self.law {
            LawSection::Direct(law) => {
                ScalingLaw::new(law.alpha, law.beta, law.epsilon).map_err(|e| named(e, "law"))?;
            }
            LawSection::Fit { epsilon, .. } => {
                if *epsilon <= 0.0 || !epsilon.is_finite() {
                    return Err(Error::Config {
                        key: "law.epsilon".into(),
                        message: "must be strictly positive".into(),
                    });
                }
            }
        }
        if self.policies.is_empty() {
            return Err(Error::Config {
                key: "policies".into(),
                message: "at least one policy required".into(),
            });
        }
        for (i, p) in self.policies.iter().enumerate() {
            match p {
                PolicySpec::Fixed { b } if *b < 1 => {
                    return Err(Error::Config {
                        key: format!("policies[{i}].b"),
                        message: "fixed batch must be >= 1".into(),
                    });
                }
                PolicySpec::Dbfl { b0, rho, cap } => {
                    if *b0 < 1 {
                        return Err(Error::Config {
                            key: format!("policies[{i}].b0"),
                            message: "initial batch must be >= 1".into(),
                        });
                    }
                    if *rho <= 1.0 || !rho.is_finite() {
                        return Err(Error::Config {
                            key: format!("policies[{i}].rho"),
                            message: "growth factor must exceed 1".into(),
                        });
                    }
                    if cap < b0 {
                        return Err(Error::Config {
                            key: format!("policies[{i}].cap"),
                            message: "cap must be >= b0".into(),
                        });
                    }
                }
                _ => {}
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config {
                key: "seeds".into(),
                message: "at least one seed required".into(),
            });
        }
        if self.max_rounds < 1 {
            return Err(Error::Config {
                key: "max_rounds".into(),
                message: "must be >= 1".into(),
            });
        }
        if self.n_samples < 1 {
            return Err(Error::Config {
                key: "n_samples".into(),
                message: "must be >= 1".into(),
            });
        }
        if let Some(task) = &self.task {
            task.build().map_err(|e| named(e, "task"))?;
        }
        Ok(())
    }

    /// Materialize the device list; sampled sections draw from `rng`
    /// (tx_power, fading_scale, compute_speed per device, in device order).
    pub fn resolve_devices<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<DeviceProfile> {
        match &self.devices {
            DeviceSection::Explicit(profiles) => profiles
                .iter()
                .enumerate()
                .map(|(id, p)| DeviceProfile { id, ..*p })
                .collect(),
            DeviceSection::Sampled { sample } => (0..sample.count)
                .map(|id| DeviceProfile {
                    id,
                    tx_power: sample_range(rng, sample.tx_power),
                    fading_scale: sample_range(rng, sample.fading_scale),
                    compute_speed: sample_range(rng, sample.compute_speed),
                })
                .collect(),
        }
    }

    /// Resolve the scaling law, fitting from CSV when requested.
    /// Relative paths are taken against `base_dir`.
    pub fn resolve_law(&self, base_dir: &Path) -> Result<ScalingLaw> {
        match &self.law {
            LawSection::Direct(law) => Ok(*law),
            LawSection::Fit { fit_from, epsilon } => {
                let path = if fit_from.is_absolute() {
                    fit_from.clone()
                } else {
                    base_dir.join(fit_from)
                };
                let samples = read_samples_csv_path(&path)?;
                Ok(fit_scaling_law(&samples, *epsilon)?.law)
            }
        }
    }

    pub fn task_section(&self) -> TaskSection {
        self.task.clone().unwrap_or_default()
    }
}

fn sample_range<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..range[1])
    }
}

fn named(err: Error, prefix: &str) -> Error {
    match err {
        Error::Domain {
            name,
            value,
            constraint,
        } => Error::Config {
            key: format!("{prefix}.{name}"),
            message: format!("{value} violates: {constraint}"),
        },
        other => other,
    }
}

/// Parse and validate a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

/// Parse and validate a config from a JSON string.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}
