//! Desk-scale synchronous FL trainer on a synthetic quadratic task.
//!
//! The task is F(w) = F* + 0.5 * sum_i c_i w_i^2 with 0 < c_i <= L, so the
//! smoothness constant, the loss infimum, and the initial gap are all known
//! exactly. Mini-batch gradients add zero-mean Gaussian noise with total
//! per-sample variance sigma^2 (covariance (sigma^2/D) I), so the estimator
//! variance is exactly sigma^2 / batch. This makes the convergence bound
//! checkable: every assumption it needs holds with equality.
//!
//! A round broadcasts the global weights, runs H local SGD steps per
//! device, and aggregates by batch-weighted averaging. Convergence is
//! declared when the running average of the global squared gradient norm
//! drops below the threshold.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scaling::ConvergenceSample;

/// Quadratic task with known smoothness, noise level, and minimum.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    /// Per-coordinate curvatures c_i; the largest is the smoothness L.
    pub curvature: Vec<f64>,
    /// Total per-sample gradient variance sigma^2.
    pub noise_var: f64,
    /// Loss infimum F*.
    pub f_star: f64,
    /// Initial weights.
    pub w0: Vec<f64>,
}

impl SyntheticTask {
    /// Anisotropic ramp: c_i = L * (i+1) / dim, w0 = w0_scale * ones.
    pub fn ramp(
        dim: usize,
        smoothness: f64,
        noise_var: f64,
        f_star: f64,
        w0_scale: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain {
                name: "dim",
                value: 0.0,
                constraint: "must be >= 1",
            });
        }
        if smoothness <= 0.0 || !smoothness.is_finite() {
            return Err(Error::Domain {
                name: "smoothness",
                value: smoothness,
                constraint: "must be strictly positive",
            });
        }
        if noise_var < 0.0 || !noise_var.is_finite() {
            return Err(Error::Domain {
                name: "noise_var",
                value: noise_var,
                constraint: "must be >= 0",
            });
        }
        let curvature = (0..dim)
            .map(|i| smoothness * (i + 1) as f64 / dim as f64)
            .collect();
        Ok(Self {
            curvature,
            noise_var,
            f_star,
            w0: vec![w0_scale; dim],
        })
    }

    pub fn dim(&self) -> usize {
        self.curvature.len()
    }

    /// Smoothness constant L = max_i c_i.
    pub fn smoothness(&self) -> f64 {
        self.curvature.iter().fold(0.0, |a, &b| a.max(b))
    }

    pub fn loss(&self, w: &[f64]) -> f64 {
        self.f_star
            + 0.5
                * self
                    .curvature
                    .iter()
                    .zip(w)
                    .map(|(&c, &x)| c * x * x)
                    .sum::<f64>()
    }

    pub fn grad(&self, w: &[f64]) -> Vec<f64> {
        self.curvature.iter().zip(w).map(|(&c, &x)| c * x).collect()
    }

    pub fn grad_norm_sq(&self, w: &[f64]) -> f64 {
        self.curvature
            .iter()
            .zip(w)
            .map(|(&c, &x)| (c * x).powi(2))
            .sum()
    }

    /// F(w0) - F*, the initialization term of the convergence bound.
    pub fn initial_gap(&self) -> f64 {
        self.loss(&self.w0) - self.f_star
    }
}

/// Mini-batch gradient: grad F(w) plus the average of `batch` i.i.d.
/// noise vectors, each N(0, (sigma^2/D) I).
///
/// The average is drawn from its exact distribution, so the estimator
/// variance is sigma^2 / batch with no approximation.
pub fn stochastic_gradient<R: Rng + ?Sized>(
    task: &SyntheticTask,
    w: &[f64],
    batch: u64,
    rng: &mut R,
) -> Vec<f64> {
    debug_assert!(batch >= 1);
    let mut g = task.grad(w);
    if task.noise_var > 0.0 {
        let std = (task.noise_var / (batch as f64 * task.dim() as f64)).sqrt();
        for gi in &mut g {
            let z: f64 = StandardNormal.sample(rng);
            *gi += std * z;
        }
    }
    g
}

/// H steps of local SGD from `w_start` at a fixed batch size.
pub fn local_sgd<R: Rng + ?Sized>(
    task: &SyntheticTask,
    w_start: &[f64],
    steps: u32,
    batch: u64,
    lr: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut w = w_start.to_vec();
    for _ in 0..steps {
        let g = stochastic_gradient(task, &w, batch, rng);
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= lr * gi;
        }
    }
    w
}

/// Batch-weighted model averaging: sum_k (b_k / B) w_k.
pub fn aggregate(local_weights: &[Vec<f64>], batches: &[u64]) -> Result<Vec<f64>> {
    if local_weights.is_empty() {
        return Err(Error::EmptyDevices);
    }
    if local_weights.len() != batches.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weight vectors vs {} batch sizes",
            local_weights.len(),
            batches.len()
        )));
    }
    let dim = local_weights[0].len();
    let total: u64 = batches.iter().sum();
    if total < 1 {
        return Err(Error::Domain {
            name: "batches",
            value: 0.0,
            constraint: "must sum to >= 1",
        });
    }
    let mut out = vec![0.0; dim];
    for (w, &b) in local_weights.iter().zip(batches) {
        if w.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "weight vectors of length {} and {}",
                dim,
                w.len()
            )));
        }
        let share = b as f64 / total as f64;
        for (o, &x) in out.iter_mut().zip(w) {
            *o += share * x;
        }
    }
    Ok(out)
}

/// Outcome of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub rounds_used: u64,
    /// Squared global gradient norm at the start of each executed round.
    pub gradient_norm_history: Vec<f64>,
    pub converged: bool,
}

/// Run synchronized rounds until the running average of the squared global
/// gradient norm drops to `threshold`, or `max_rounds`.
///
/// `schedule(round)` supplies the per-device batch sizes for each round;
/// each device performs `steps` local SGD steps at learning rate `lr` from
/// the freshly broadcast global model.
#[allow(clippy::too_many_arguments)]
pub fn run_until_threshold<R, S>(
    task: &SyntheticTask,
    devices: usize,
    mut schedule: S,
    steps: u32,
    lr: f64,
    threshold: f64,
    max_rounds: u64,
    rng: &mut R,
) -> Result<TrainRun>
where
    R: Rng + ?Sized,
    S: FnMut(u64) -> Vec<u64>,
{
    if threshold <= 0.0 || threshold.is_nan() {
        return Err(Error::Domain {
            name: "threshold",
            value: threshold,
            constraint: "must be strictly positive",
        });
    }
    if devices == 0 {
        return Err(Error::EmptyDevices);
    }
    let mut w = task.w0.clone();
    let mut history = Vec::new();
    let mut norm_sum = 0.0;
    for round in 0..max_rounds {
        let batches = schedule(round);
        if batches.len() != devices {
            return Err(Error::DimensionMismatch(format!(
                "schedule produced {} batch sizes for {} devices",
                batches.len(),
                devices
            )));
        }
        // gradient norm at the round's starting (global) model
        let g2 = task.grad_norm_sq(&w);
        history.push(g2);
        norm_sum += g2;

        let locals: Vec<Vec<f64>> = batches
            .iter()
            .map(|&b| local_sgd(task, &w, steps, b, lr, rng))
            .collect();
        w = aggregate(&locals, &batches)?;

        let rounds_used = round + 1;
        if norm_sum / rounds_used as f64 <= threshold {
            return Ok(TrainRun {
                rounds_used,
                gradient_norm_history: history,
                converged: true,
            });
        }
    }
    Ok(TrainRun {
        rounds_used: max_rounds,
        gradient_norm_history: history,
        converged: false,
    })
}

/// One (batch, rounds) sample point, possibly tainted by unconverged trials.
#[derive(Debug, Clone, Copy)]
pub struct SampledPoint {
    pub sample: ConvergenceSample,
    /// False when any trial hit `max_rounds` without converging; such
    /// points are excluded from fitting.
    pub all_converged: bool,
}

/// For each global batch size, run `trials` independent training runs with
/// a near-uniform per-device split and average the convergence rounds.
///
/// Each trial gets its own RNG stream derived from `rng`, so trials are
/// independent and reorderable without changing any single trajectory.
#[allow(clippy::too_many_arguments)]
pub fn sample_round_batch_pairs<R: Rng + ?Sized>(
    task: &SyntheticTask,
    b_list: &[u64],
    trials: u64,
    devices: usize,
    steps: u32,
    lr: f64,
    threshold: f64,
    max_rounds: u64,
    rng: &mut R,
) -> Result<Vec<SampledPoint>> {
    use rand::SeedableRng;
    if trials < 1 {
        return Err(Error::Domain {
            name: "trials",
            value: trials as f64,
            constraint: "must be >= 1",
        });
    }
    let mut out = Vec::with_capacity(b_list.len());
    for &b in b_list {
        let split = uniform_split(b, devices);
        let mut total_rounds = 0.0;
        let mut all_converged = true;
        for _ in 0..trials {
            let mut trial_rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng.next_u64());
            let run = run_until_threshold(
                task,
                devices,
                |_| split.clone(),
                steps,
                lr,
                threshold,
                max_rounds,
                &mut trial_rng,
            )?;
            all_converged &= run.converged;
            total_rounds += run.rounds_used as f64;
        }
        out.push(SampledPoint {
            sample: ConvergenceSample {
                global_batch: b,
                rounds: total_rounds / trials as f64,
            },
            all_converged,
        });
    }
    Ok(out)
}

/// Split B over `devices` as evenly as possible (first B mod K devices get
/// one extra sample).
pub fn uniform_split(b: u64, devices: usize) -> Vec<u64> {
    let k = devices as u64;
    let base = b / k;
    let extra = (b % k) as usize;
    (0..devices)
        .map(|i| base + u64::from((i as u64) < extra as u64))
        .collect()
}

// ---------------------------------------------------------------------------
// Convergence bound
// ---------------------------------------------------------------------------

/// Largest admissible learning rate: 1/L for H = 1, otherwise
/// (-H + sqrt(H (3H - 2))) / (L H (H - 1)).
pub fn max_learning_rate(smoothness: f64, steps: u32) -> f64 {
    let l = smoothness;
    if steps <= 1 {
        1.0 / l
    } else {
        let h = f64::from(steps);
        (-h + (h * (3.0 * h - 2.0)).sqrt()) / (l * h * (h - 1.0))
    }
}

/// Upper bound on the running average of the squared global gradient norm
/// after N rounds:
///
///   2 (F(w0) - F*) / (lr N H) + (lr L sigma^2 / B)(H + lr L K (2H-1)(H-1)/6)
pub fn convergence_bound(
    task: &SyntheticTask,
    devices: usize,
    steps: u32,
    global_batch: u64,
    rounds: u64,
    lr: f64,
) -> Result<f64> {
    let l = task.smoothness();
    let cap = max_learning_rate(l, steps);
    if lr > cap * (1.0 + 1e-12) {
        return Err(Error::Domain {
            name: "lr",
            value: lr,
            constraint: "must not exceed the admissible learning-rate cap",
        });
    }
    if global_batch < 1 || rounds < 1 {
        return Err(Error::Domain {
            name: "global_batch/rounds",
            value: 0.0,
            constraint: "must be >= 1",
        });
    }
    let h = f64::from(steps);
    let k = devices as f64;
    let init = 2.0 * task.initial_gap() / (lr * rounds as f64 * h);
    let drift = h + lr * l * k * (2.0 * h - 1.0) * (h - 1.0) / 6.0;
    let noise = lr * l * task.noise_var / global_batch as f64 * drift;
    Ok(init + noise)
}

/// Serialize a training run as CSV: `round,grad_norm_sq` plus a
/// `cum_latency` column when per-round cumulative latencies are supplied
/// (e.g. by the simulation harness).
pub fn write_run_trace_csv<W: std::io::Write>(
    mut writer: W,
    run: &TrainRun,
    cumulative_latency: Option<&[f64]>,
) -> Result<()> {
    if let Some(lat) = cumulative_latency {
        if lat.len() != run.gradient_norm_history.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} latency entries for {} rounds",
                lat.len(),
                run.gradient_norm_history.len()
            )));
        }
        writeln!(writer, "round,grad_norm_sq,cum_latency")?;
        for (n, (g2, l)) in run.gradient_norm_history.iter().zip(lat).enumerate() {
            writeln!(writer, "{n},{g2},{l}")?;
        }
    } else {
        writeln!(writer, "round,grad_norm_sq")?;
        for (n, g2) in run.gradient_norm_history.iter().enumerate() {
            writeln!(writer, "{n},{g2}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noiseless_1d() -> SyntheticTask {
        SyntheticTask::ramp(1, 1.0, 0.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn gradient_is_exact_without_noise() {
        let task = noiseless_1d();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = stochastic_gradient(&task, &[0.7], 4, &mut rng);
        assert_abs_diff_eq!(g[0], 0.7);
    }

    #[test]
    fn gradient_is_unbiased() {
        let task = SyntheticTask::ramp(4, 1.0, 2.0, 0.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mut mean = vec![0.0; 4];
        for _ in 0..n {
            let g = stochastic_gradient(&task, &[0.0; 4], 1, &mut rng);
            for (m, gi) in mean.iter_mut().zip(&g) {
                *m += gi;
            }
        }
        // per-coordinate std is sqrt(sigma^2 / D) = sqrt(0.5)
        let tol = 3.0 * (task.noise_var / 4.0_f64).sqrt() / (n as f64).sqrt();
        for m in mean {
            assert!((m / n as f64).abs() <= tol);
        }
    }

    #[test]
    fn gradient_variance_scales_inversely_with_batch() {
        let task = SyntheticTask::ramp(8, 1.0, 4.0, 0.0, 0.0).unwrap();
        let n = 100_000;
        let var_at = |batch: u64, seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut acc = 0.0;
            for _ in 0..n {
                let g = stochastic_gradient(&task, &[0.0; 8], batch, &mut rng);
                acc += g.iter().map(|x| x * x).sum::<f64>();
            }
            acc / n as f64
        };
        let v1 = var_at(1, 10);
        let v4 = var_at(4, 11);
        assert_relative_eq!(v1, 4.0, max_relative = 0.05);
        assert_relative_eq!(v4 / v1, 0.25, max_relative = 0.05);
    }

    #[test]
    fn local_sgd_exact_steps() {
        let task = noiseless_1d();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let one = local_sgd(&task, &[1.0], 1, 1, 0.1, &mut rng);
        assert_abs_diff_eq!(one[0], 0.9, epsilon = 1e-15);
        let two = local_sgd(&task, &[1.0], 2, 1, 0.1, &mut rng);
        assert_abs_diff_eq!(two[0], 0.81, epsilon = 1e-15);
        let frozen = local_sgd(&task, &[1.0], 3, 1, 0.0, &mut rng);
        assert_abs_diff_eq!(frozen[0], 1.0);
    }

    #[test]
    fn aggregation_is_batch_weighted() {
        let w = aggregate(&[vec![1.0], vec![0.0]], &[3, 1]).unwrap();
        assert_abs_diff_eq!(w[0], 0.75);
        let same = aggregate(&vec![vec![0.4, 0.2]; 3], &[5, 1, 2]).unwrap();
        assert_abs_diff_eq!(same[0], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(same[1], 0.2, epsilon = 1e-15);
        let single = aggregate(&[vec![2.0]], &[7]).unwrap();
        assert_abs_diff_eq!(single[0], 2.0);
        assert!(aggregate(&[vec![1.0], vec![1.0, 2.0]], &[1, 1]).is_err());
        // permutation invariance
        let a = aggregate(&[vec![1.0], vec![4.0]], &[3, 1]).unwrap();
        let b = aggregate(&[vec![4.0], vec![1.0]], &[1, 3]).unwrap();
        assert_abs_diff_eq!(a[0], b[0]);
    }

    #[test]
    fn trivial_threshold_converges_in_one_round() {
        let task = SyntheticTask::ramp(3, 1.0, 0.0, 0.0, 1.0).unwrap();
        let g0 = task.grad_norm_sq(&task.w0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let run = run_until_threshold(&task, 2, |_| vec![5, 5], 2, 0.1, g0 * 1.01, 100, &mut rng)
            .unwrap();
        assert!(run.converged);
        assert_eq!(run.rounds_used, 1);
        assert_eq!(run.gradient_norm_history.len(), 1);
    }

    #[test]
    fn noiseless_rounds_do_not_depend_on_batch() {
        let task = SyntheticTask::ramp(6, 1.0, 0.0, 0.0, 1.0).unwrap();
        let run_at = |b: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            run_until_threshold(
                &task,
                5,
                move |_| uniform_split(b, 5),
                3,
                0.15,
                0.05,
                10_000,
                &mut rng,
            )
            .unwrap()
        };
        let small = run_at(10);
        let large = run_at(100);
        assert_eq!(small.rounds_used, large.rounds_used);
        assert_eq!(small.gradient_norm_history, large.gradient_norm_history);
    }

    #[test]
    fn noiseless_centralized_reduction() {
        // sigma = 0, H = 1, identical data: FL equals centralized GD
        let task = SyntheticTask::ramp(4, 1.0, 0.0, 0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let run =
            run_until_threshold(&task, 3, |_| vec![4, 4, 4], 1, 0.2, 0.01, 2000, &mut rng).unwrap();
        // centralized reference
        let mut w = task.w0.clone();
        for (round, &g2) in run.gradient_norm_history.iter().enumerate() {
            assert_relative_eq!(task.grad_norm_sq(&w), g2, max_relative = 1e-12);
            let g = task.grad(&w);
            for (wi, gi) in w.iter_mut().zip(&g) {
                *wi -= 0.2 * gi;
            }
            let _ = round;
        }
        assert!(run.converged);
    }

    #[test]
    fn unconverged_runs_are_flagged() {
        let task = SyntheticTask::ramp(4, 1.0, 4.0, 0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let run =
            run_until_threshold(&task, 2, |_| vec![1, 1], 1, 0.05, 1e-9, 20, &mut rng).unwrap();
        assert!(!run.converged);
        assert_eq!(run.rounds_used, 20);
    }

    #[test]
    fn sampling_is_reproducible() {
        let task = SyntheticTask::ramp(8, 1.0, 4.0, 0.0, 1.0).unwrap();
        let sample = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            sample_round_batch_pairs(&task, &[20, 40], 3, 4, 2, 0.1, 0.01, 8000, &mut rng).unwrap()
        };
        let a = sample();
        let b = sample();
        assert_eq!(a[0].sample, b[0].sample);
        assert_eq!(a[1].sample, b[1].sample);
        assert!(a[0].sample.rounds >= a[1].sample.rounds);
    }

    #[test]
    fn noiseless_samples_fit_constant_law() {
        let task = SyntheticTask::ramp(6, 1.0, 0.0, 0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let points =
            sample_round_batch_pairs(&task, &[20, 40, 80], 2, 4, 2, 0.1, 1e-3, 5000, &mut rng)
                .unwrap();
        let rounds: Vec<f64> = points.iter().map(|p| p.sample.rounds).collect();
        assert!(rounds.windows(2).all(|w| w[0] == w[1]));
        let samples: Vec<ConvergenceSample> = points.iter().map(|p| p.sample).collect();
        let fit = crate::scaling::fit_scaling_law(&samples, 0.5).unwrap();
        assert!(fit.law.beta.abs() < 1e-9);
    }

    #[test]
    fn run_trace_csv_layout() {
        let run = TrainRun {
            rounds_used: 2,
            gradient_norm_history: vec![4.0, 1.0],
            converged: true,
        };
        let mut buf = Vec::new();
        write_run_trace_csv(&mut buf, &run, None).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "round,grad_norm_sq\n0,4\n1,1\n"
        );
        let mut buf = Vec::new();
        write_run_trace_csv(&mut buf, &run, Some(&[0.5, 1.25])).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "round,grad_norm_sq,cum_latency\n0,4,0.5\n1,1,1.25\n"
        );
        assert!(write_run_trace_csv(&mut Vec::new(), &run, Some(&[0.5])).is_err());
    }

    #[test]
    fn learning_rate_cap_values() {
        assert_abs_diff_eq!(max_learning_rate(1.0, 1), 1.0);
        assert_relative_eq!(
            max_learning_rate(1.0, 2),
            0.414_213_562_373_095_15,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            max_learning_rate(2.0, 2),
            0.414_213_562_373_095_15 / 2.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn convergence_bound_hand_value() {
        // gap = 1: single coordinate c = 1, w0 = sqrt(2)
        let task = SyntheticTask {
            curvature: vec![1.0],
            noise_var: 4.0,
            f_star: 0.0,
            w0: vec![2.0_f64.sqrt()],
        };
        assert_relative_eq!(task.initial_gap(), 1.0, max_relative = 1e-12);
        let bound = convergence_bound(&task, 10, 2, 40, 50, 0.1).unwrap();
        assert_relative_eq!(bound, 0.225, max_relative = 1e-12);
        // H = 1 drops the drift term
        let b1 = convergence_bound(&task, 10, 1, 40, 50, 0.1).unwrap();
        assert_relative_eq!(
            b1,
            2.0 / (0.1 * 50.0) + 0.1 * 4.0 / 40.0,
            max_relative = 1e-12
        );
        // B -> infinity leaves only the initialization term
        let binf = convergence_bound(&task, 10, 2, u64::MAX, 50, 0.1).unwrap();
        assert_relative_eq!(binf, 2.0 / (0.1 * 50.0 * 2.0), max_relative = 1e-6);
        assert!(convergence_bound(&task, 10, 2, 40, 50, 0.5).is_err());
    }
}
