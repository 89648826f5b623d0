//! Full policy-comparison harness on a heterogeneous fast-fading system.
//!
//! Simulates the adaptive controller against the uniform-optimal, fixed,
//! and exponential-growth baselines over seeded channel sequences, then
//! prints the comparison table (mean end-to-end latency, rounds, and
//! latency relative to the proposed controller).
//!
//! Run: cargo run --release --example policy_comparison

use std::path::Path;

use fedbatch::harness::{
    parse_config_str, render_comparison, run_seed_comparison, summarize, SimulationMode,
};

const CONFIG: &str = include_str!("configs/paper_fast.json");

fn main() -> anyhow::Result<()> {
    let cfg = parse_config_str(CONFIG)?;
    let law = cfg.resolve_law(Path::new("."))?;
    println!(
        "law: alpha = {}, beta = {}, epsilon = {} (floor B > {})",
        law.alpha,
        law.beta,
        law.epsilon,
        law.feasible_batch_floor()
    );
    println!(
        "{} seeds, fading: fast, {} policies\n",
        cfg.seeds.len(),
        cfg.policies.len()
    );

    let mut summaries = Vec::new();
    for &seed in &cfg.seeds {
        for (_, summary) in run_seed_comparison(&cfg, law, seed, SimulationMode::Credit)? {
            summaries.push(summary);
        }
    }
    let rows = summarize(&summaries);
    print!("{}", render_comparison(&rows));

    let proposed = rows.iter().find(|r| r.policy == "proposed").unwrap();
    for r in &rows {
        if r.policy != "proposed" {
            println!(
                "proposed cuts mean E2E latency vs {} by {:.1}%",
                r.policy,
                100.0 * (1.0 - proposed.mean_e2e_latency / r.mean_e2e_latency)
            );
        }
    }
    Ok(())
}
