//! Fit the round-batch scaling law from synthetic training runs.
//!
//! Trains the quadratic task at several global batch sizes, records the
//! trial-averaged convergence rounds, fits N(B) = alpha / (eps - beta/B),
//! and prints the fit quality plus predictions.
//!
//! Run: cargo run --release --example fit_scaling_law

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fedbatch::scaling::{fit_scaling_law, goodness_of_fit, ConvergenceSample};
use fedbatch::trainer::{max_learning_rate, sample_round_batch_pairs, SyntheticTask};

fn main() -> anyhow::Result<()> {
    let task = SyntheticTask::ramp(20, 1.0, 4.0, 0.0, 1.0)?;
    let devices = 10;
    let steps = 5;
    let lr = 0.9 * max_learning_rate(task.smoothness(), steps);
    let epsilon = 0.02; // gradient-norm tolerance = the law's epsilon

    println!("sampling convergence rounds (20 trials per batch size)...");
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let points = sample_round_batch_pairs(
        &task,
        &[20, 40, 80, 160],
        20,
        devices,
        steps,
        lr,
        epsilon,
        20_000,
        &mut rng,
    )?;
    println!("\n  B      mean rounds");
    for p in &points {
        println!(
            "{:4}   {:12.2}{}",
            p.sample.global_batch,
            p.sample.rounds,
            if p.all_converged {
                ""
            } else {
                "   (unconverged trials, excluded)"
            }
        );
    }

    let samples: Vec<ConvergenceSample> = points
        .iter()
        .filter(|p| p.all_converged)
        .map(|p| p.sample)
        .collect();
    let fit = fit_scaling_law(&samples, epsilon)?;
    let r2 = goodness_of_fit(&fit.law, &samples)?;
    println!(
        "\nfitted law: alpha = {:.4}, beta = {:.4}, epsilon = {}",
        fit.law.alpha, fit.law.beta, fit.law.epsilon
    );
    println!(
        "ssr = {:.4}, R^2 = {:.4}, feasibility floor B > {:.2}",
        fit.ssr,
        r2,
        fit.law.feasible_batch_floor()
    );

    println!("\npredicted rounds:");
    for b in [20u64, 40, 80, 160, 320, 1000] {
        match fit.law.predict_rounds(b) {
            Ok(n) => println!("  N({b:5}) = {n}"),
            Err(e) => println!("  N({b:5}) -> {e}"),
        }
    }
    println!("\n{}", serde_json::to_string_pretty(&fit.law)?);
    Ok(())
}
