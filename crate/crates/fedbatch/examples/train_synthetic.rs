//! Synthetic FL training and the convergence-rate bound.
//!
//! Runs synchronized rounds on the quadratic task at several global batch
//! sizes and compares the seed-averaged running mean of the squared
//! gradient norm against the analytic upper bound
//!
//!   2 (F(w0) - F*) / (lr N H) + (lr L s^2/B)(H + lr L K (2H-1)(H-1)/6)
//!
//! Run: cargo run --release --example train_synthetic

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fedbatch::trainer::{
    convergence_bound, max_learning_rate, run_until_threshold, uniform_split, SyntheticTask,
};

fn main() -> anyhow::Result<()> {
    let task = SyntheticTask::ramp(20, 1.0, 4.0, 0.0, 1.0)?;
    let devices = 10;
    let steps = 5;
    let lr = 0.9 * max_learning_rate(task.smoothness(), steps);
    let seeds = 20;
    let max_rounds = 50;
    println!(
        "task: dim {}, L = {}, sigma^2 = {}, F(w0) - F* = {:.3}",
        task.dim(),
        task.smoothness(),
        task.noise_var,
        task.initial_gap()
    );
    println!(
        "H = {steps}, lr = {lr:.4} (cap {:.4})\n",
        max_learning_rate(task.smoothness(), steps)
    );

    for b in [20u64, 40, 80] {
        let split = uniform_split(b, devices);
        let mut running = vec![0.0; max_rounds as usize];
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let run = run_until_threshold(
                &task,
                devices,
                |_| split.clone(),
                steps,
                lr,
                f64::MIN_POSITIVE,
                max_rounds,
                &mut rng,
            )?;
            let mut acc = 0.0;
            for (n, g2) in run.gradient_norm_history.iter().enumerate() {
                acc += g2;
                running[n] += acc / (n + 1) as f64 / seeds as f64;
            }
        }
        println!("B = {b}:  N    empirical mean   bound");
        for n in [1u64, 5, 10, 25, 50] {
            let bound = convergence_bound(&task, devices, steps, b, n, lr)?;
            println!(
                "      {n:4}   {:14.4}   {:8.4}",
                running[(n - 1) as usize],
                bound
            );
        }
        println!();
    }
    Ok(())
}
