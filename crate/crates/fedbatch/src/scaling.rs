//! Round-batch scaling law: N(B) = ceil(alpha / (epsilon - beta/B)).
//!
//! The law maps a global batch size to the number of communication rounds
//! needed to reach an epsilon-level convergence target. It is defined only
//! for B > beta/epsilon (the feasibility floor). Parameters (alpha, beta)
//! are fitted from (batch, rounds) samples by least squares: the exact
//! linearization 1/N = epsilon/alpha - (beta/alpha)/B seeds an ordinary
//! least-squares estimate, which a derivative-free coordinate search then
//! refines against the untransformed residuals.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerated relative slack when ceiling float quantities that are
/// mathematically integral.
pub(crate) const CEIL_SLOP: f64 = 1e-9;

/// Ceiling with relative slack: values within ~1e-9 of an integer from
/// above are not bumped to the next one.
pub(crate) fn ceil_slop(x: f64) -> f64 {
    (x - CEIL_SLOP * x.abs().max(1.0)).ceil()
}

/// Fitted round-batch scaling law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingLaw {
    /// Rounds scale (alpha > 0).
    pub alpha: f64,
    /// Batch scale (beta >= 0).
    pub beta: f64,
    /// Convergence tolerance the law was fitted for (epsilon > 0).
    pub epsilon: f64,
}

impl ScalingLaw {
    pub fn new(alpha: f64, beta: f64, epsilon: f64) -> Result<Self> {
        if alpha <= 0.0 || !alpha.is_finite() {
            return Err(Error::Domain {
                name: "alpha",
                value: alpha,
                constraint: "must be strictly positive",
            });
        }
        if beta < 0.0 || !beta.is_finite() {
            return Err(Error::Domain {
                name: "beta",
                value: beta,
                constraint: "must be >= 0",
            });
        }
        if epsilon <= 0.0 || !epsilon.is_finite() {
            return Err(Error::Domain {
                name: "epsilon",
                value: epsilon,
                constraint: "must be strictly positive",
            });
        }
        Ok(Self {
            alpha,
            beta,
            epsilon,
        })
    }

    /// Smallest real value the global batch must strictly exceed: beta/epsilon.
    pub fn feasible_batch_floor(&self) -> f64 {
        self.beta / self.epsilon
    }

    /// True when the law is defined at global batch `b`.
    pub fn is_feasible(&self, b: f64) -> bool {
        b > self.feasible_batch_floor()
    }

    /// Real-valued (un-ceiled) convergence rounds alpha / (epsilon - beta/B).
    pub fn rounds_real(&self, b: f64) -> Result<f64> {
        if !self.is_feasible(b) {
            return Err(Error::InfeasibleBatch {
                batch: b,
                floor: self.feasible_batch_floor(),
            });
        }
        Ok(self.alpha / (self.epsilon - self.beta / b))
    }

    /// Convergence rounds N(B) = ceil(alpha / (epsilon - beta/B)).
    ///
    /// Nonincreasing in B; tends to ceil(alpha/epsilon) as B grows.
    pub fn predict_rounds(&self, b: u64) -> Result<u64> {
        let real = self.rounds_real(b as f64)?;
        Ok(ceil_slop(real).max(1.0) as u64)
    }
}

/// One offline training observation: global batch size and the
/// trial-averaged (real-valued) round count at which it converged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSample {
    pub global_batch: u64,
    pub rounds: f64,
}

/// Outcome of [`fit_scaling_law`].
#[derive(Debug, Clone, Copy)]
pub struct FitResult {
    pub law: ScalingLaw,
    /// Sum of squared residuals in rounds-space at the fitted parameters.
    pub ssr: f64,
    /// Set when beta had to be clamped to the per-sample feasibility
    /// boundary epsilon * min(B) (minus a small margin).
    pub clamped: bool,
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

fn validate_samples(samples: &[ConvergenceSample]) -> Result<()> {
    for s in samples {
        if s.global_batch < 1 {
            return Err(Error::Domain {
                name: "global_batch",
                value: s.global_batch as f64,
                constraint: "must be >= 1",
            });
        }
        if s.rounds <= 0.0 || !s.rounds.is_finite() {
            return Err(Error::Domain {
                name: "rounds",
                value: s.rounds,
                constraint: "must be strictly positive",
            });
        }
    }
    Ok(())
}

fn ssr_at(samples: &[ConvergenceSample], epsilon: f64, alpha: f64, beta: f64) -> f64 {
    samples
        .iter()
        .map(|s| {
            let pred = alpha / (epsilon - beta / s.global_batch as f64);
            (s.rounds - pred).powi(2)
        })
        .sum()
}

/// Closed-form alpha minimizing the SSR for a fixed beta:
/// alpha = sum(N_m u_m) / sum(u_m^2), u_m = 1/(epsilon - beta/B_m).
fn profiled_alpha(samples: &[ConvergenceSample], epsilon: f64, beta: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for s in samples {
        let u = 1.0 / (epsilon - beta / s.global_batch as f64);
        num += s.rounds * u;
        den += u * u;
    }
    num / den
}

/// Least-squares fit of (alpha, beta) to (batch, rounds) samples at a given
/// epsilon.
///
/// Requires at least two samples with distinct batch sizes. The fitted beta
/// is constrained to [0, epsilon * min(B)): if the data push it past the
/// feasibility boundary it is clamped just inside and the result is flagged.
pub fn fit_scaling_law(samples: &[ConvergenceSample], epsilon: f64) -> Result<FitResult> {
    if epsilon <= 0.0 || !epsilon.is_finite() {
        return Err(Error::Domain {
            name: "epsilon",
            value: epsilon,
            constraint: "must be strictly positive",
        });
    }
    validate_samples(samples)?;
    let mut batches: Vec<u64> = samples.iter().map(|s| s.global_batch).collect();
    batches.sort_unstable();
    batches.dedup();
    if batches.len() < 2 {
        return Err(Error::Underdetermined);
    }
    let min_batch = batches[0] as f64;
    // Feasibility boundary minus a small margin so predictions stay finite.
    let beta_max = epsilon * min_batch * (1.0 - 1e-9);

    // Linearized OLS: y = 1/N against x = 1/B gives intercept epsilon/alpha
    // and slope -beta/alpha; exact for noiseless data.
    let n = samples.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for s in samples {
        let x = 1.0 / s.global_batch as f64;
        let y = 1.0 / s.rounds;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;

    let (mut beta, clamped_init) = if intercept > 0.0 {
        let alpha0 = epsilon / intercept;
        let beta0 = -slope * alpha0;
        if beta0 < 0.0 {
            (0.0, false)
        } else if beta0 > beta_max {
            (beta_max, true)
        } else {
            (beta0, false)
        }
    } else {
        // Degenerate linearization (can only happen with heavy noise);
        // start from the constant-rounds law.
        (0.0, false)
    };

    // Coordinate refinement of the rounds-space SSR: alpha is profiled out
    // exactly, beta moves by a shrinking step until 1e-10 relative.
    let mut alpha = profiled_alpha(samples, epsilon, beta);
    let mut best = ssr_at(samples, epsilon, alpha, beta);
    let scale = beta.max(epsilon * min_batch * 0.1).max(1e-12);
    let mut step = scale * 0.25;
    let mut clamped = clamped_init;
    while step > 1e-10 * scale {
        let mut improved = false;
        for cand in [beta + step, beta - step] {
            let cand = cand.clamp(0.0, beta_max);
            if cand == beta {
                continue;
            }
            let a = profiled_alpha(samples, epsilon, cand);
            let ssr = ssr_at(samples, epsilon, a, cand);
            if ssr < best {
                best = ssr;
                beta = cand;
                alpha = a;
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    if beta >= beta_max * (1.0 - 1e-12) && beta_max > 0.0 && beta > 0.0 {
        clamped = true;
    }

    Ok(FitResult {
        law: ScalingLaw::new(alpha, beta, epsilon)?,
        ssr: best,
        clamped,
    })
}

/// Coefficient of determination of the law's real-valued predictions
/// against observed rounds.
///
/// Degenerate observation sets (zero variance) return the sentinel 0.0,
/// or 1.0 when the fit is also exact.
pub fn goodness_of_fit(law: &ScalingLaw, samples: &[ConvergenceSample]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Underdetermined);
    }
    validate_samples(samples)?;
    let mean = samples.iter().map(|s| s.rounds).sum::<f64>() / samples.len() as f64;
    let mut ss_tot = 0.0;
    let mut ss_res = 0.0;
    for s in samples {
        let pred = law.rounds_real(s.global_batch as f64)?;
        ss_tot += (s.rounds - mean).powi(2);
        ss_res += (s.rounds - pred).powi(2);
    }
    let tiny = 1e-12 * mean.powi(2).max(1.0);
    if ss_tot < tiny {
        return Ok(if ss_res < tiny { 1.0 } else { 0.0 });
    }
    Ok(1.0 - ss_res / ss_tot)
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// Read samples from two-column CSV with header `global_batch,rounds`.
pub fn read_samples_csv<R: Read>(reader: R) -> Result<Vec<ConvergenceSample>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for record in rdr.deserialize() {
        out.push(record?);
    }
    Ok(out)
}

pub fn read_samples_csv_path(path: &Path) -> Result<Vec<ConvergenceSample>> {
    read_samples_csv(std::fs::File::open(path)?)
}

/// Write samples as two-column CSV with header `global_batch,rounds`.
pub fn write_samples_csv<W: Write>(writer: W, samples: &[ConvergenceSample]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for s in samples {
        wtr.serialize(s)?;
    }
    wtr.flush()?;
    Ok(())
}
