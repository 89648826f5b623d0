//! Command-line front end: fit, optimize, simulate, oracle.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fedbatch::harness::{
    parse_config, render_comparison, summarize, write_traces_csv, ExperimentConfig, Fading,
    SimulationMode,
};
use fedbatch::optimizer::{
    brute_force_allocation, brute_force_global_batch, default_b_max, exact_e2e,
    optimal_global_batch, StaticSystem,
};
use fedbatch::scaling::{
    fit_scaling_law, read_samples_csv_path, write_samples_csv, ConvergenceSample,
};
use fedbatch::system::{draw_channel, expected_comm_latency, observed_comm_latencies};
use fedbatch::trainer::sample_round_batch_pairs;

#[derive(Parser)]
#[command(
    name = "fedbatch",
    about = "Latency-minimizing batch-size control for synchronous federated learning",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the round-batch scaling law from a samples CSV or from built-in
    /// synthetic training runs.
    Fit {
        /// Experiment config (supplies the synthetic task and epsilon).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Two-column CSV (global_batch,rounds); skips the built-in trainer.
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Convergence tolerance; overrides the config's law epsilon.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Global batch sizes for built-in sampling.
        #[arg(long, value_delimiter = ',', default_value = "20,40,80,160")]
        batches: Vec<u64>,
        /// Trials per batch size for built-in sampling.
        #[arg(long, default_value_t = 20)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for law.json (and samples.csv when generated).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the optimal global batch and per-device allocation for the
    /// config's system.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the policy-comparison simulation: traces CSV plus summary.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Restrict to named policies (repeatable), e.g. --policy proposed.
        #[arg(long)]
        policy: Vec<String>,
        /// Convergence accounting: scaling-law credit or synthetic trainer.
        #[arg(long, value_parser = ["credit", "trainer"], default_value = "credit")]
        mode: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify the closed-form optimizer against brute-force enumeration on
    /// a small instance.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Fit {
            config,
            samples,
            epsilon,
            batches,
            trials,
            seed,
            out,
        } => cmd_fit(config, samples, epsilon, &batches, trials, seed, out),
        Command::Optimize { config, seed, out } => cmd_optimize(&config, seed, out),
        Command::Simulate {
            config,
            seed,
            policy,
            mode,
            out,
        } => cmd_simulate(&config, seed, &policy, &mode, out),
        Command::Oracle { config, seed, out } => cmd_oracle(&config, seed, out),
    }
}

fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    parse_config(path).with_context(|| format!("loading config {}", path.display()))
}

fn write_out(out: &Option<PathBuf>, name: &str, contents: &str) -> anyhow::Result<()> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(name);
        std::fs::write(&path, contents)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn cmd_fit(
    config: Option<PathBuf>,
    samples_path: Option<PathBuf>,
    epsilon: Option<f64>,
    batches: &[u64],
    trials: u64,
    seed: u64,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let cfg = config.as_deref().map(load_config).transpose()?;
    let epsilon = match (epsilon, &cfg) {
        (Some(e), _) => e,
        (None, Some(c)) => match &c.law {
            fedbatch::harness::LawSection::Direct(law) => law.epsilon,
            fedbatch::harness::LawSection::Fit { epsilon, .. } => *epsilon,
        },
        (None, None) => bail!("--epsilon is required when no --config is given"),
    };

    let samples: Vec<ConvergenceSample> = if let Some(path) = samples_path {
        read_samples_csv_path(&path).with_context(|| format!("reading {}", path.display()))?
    } else {
        let cfg = cfg
            .as_ref()
            .context("--config is required for built-in sample generation")?;
        let task = cfg.task_section().build()?;
        let mut dev_rng = ChaCha8Rng::seed_from_u64(seed);
        let devices = cfg.resolve_devices(&mut dev_rng).len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(3);
        let points = sample_round_batch_pairs(
            &task,
            batches,
            trials,
            devices,
            cfg.system.local_steps,
            cfg.system.learning_rate,
            epsilon,
            cfg.max_rounds,
            &mut rng,
        )?;
        let usable: Vec<ConvergenceSample> = points
            .iter()
            .filter(|p| p.all_converged)
            .map(|p| p.sample)
            .collect();
        for p in points.iter().filter(|p| !p.all_converged) {
            eprintln!(
                "warning: B = {} had unconverged trials; excluded from the fit",
                p.sample.global_batch
            );
        }
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &usable)?;
        write_out(&out, "samples.csv", &String::from_utf8(buf)?)?;
        usable
    };

    let fit = fit_scaling_law(&samples, epsilon)?;
    let json = serde_json::to_string_pretty(&fit.law)?;
    if fit.clamped {
        eprintln!("warning: beta clamped to the feasibility boundary");
    }
    eprintln!(
        "fit over {} samples: ssr = {:.6e}, r_squared = {:.6}",
        samples.len(),
        fit.ssr,
        fedbatch::scaling::goodness_of_fit(&fit.law, &samples)?
    );
    println!("{json}");
    write_out(&out, "law.json", &json)?;
    Ok(())
}

/// Static system view of a config: fixed channel draw under slow fading,
/// Monte Carlo expected latencies under fast fading.
fn static_view(cfg: &ExperimentConfig, seed: u64) -> anyhow::Result<StaticSystem> {
    let mut dev_rng = ChaCha8Rng::seed_from_u64(seed);
    let devices = cfg.resolve_devices(&mut dev_rng);
    let comm = match cfg.fading {
        Fading::Slow => {
            let mut chan_rng = ChaCha8Rng::seed_from_u64(seed);
            chan_rng.set_stream(1);
            let channel = draw_channel(&devices, &mut chan_rng);
            observed_comm_latencies(&devices, &channel, &cfg.system)?
        }
        Fading::Fast => {
            let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
            init_rng.set_stream(2);
            devices
                .iter()
                .map(|p| expected_comm_latency(p, &cfg.system, cfg.n_samples, &mut init_rng))
                .collect::<fedbatch::Result<Vec<f64>>>()?
        }
    };
    Ok(StaticSystem::new(cfg.system, devices, comm)?)
}

fn cmd_optimize(config: &Path, seed: u64, out: Option<PathBuf>) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let law = cfg.resolve_law(&config_dir(config))?;
    let sys = static_view(&cfg, seed)?;
    let opt = optimal_global_batch(&sys, &law, cfg.b_max)?;
    let json = serde_json::to_string_pretty(&opt)?;
    println!("{json}");
    write_out(&out, "optimize.json", &json)?;
    Ok(())
}

fn cmd_simulate(
    config: &Path,
    seed: Option<u64>,
    policy_filter: &[String],
    mode: &str,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let mut cfg = load_config(config)?;
    let law = cfg.resolve_law(&config_dir(config))?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if !policy_filter.is_empty() {
        let known: Vec<String> = cfg.policies.iter().map(|p| p.name()).collect();
        for wanted in policy_filter {
            if !known.contains(wanted) {
                bail!(
                    "--policy {wanted} not in config (available: {})",
                    known.join(", ")
                );
            }
        }
        cfg.policies.retain(|p| policy_filter.contains(&p.name()));
    }
    let mode = match mode {
        "trainer" => SimulationMode::Trainer,
        _ => SimulationMode::Credit,
    };

    let mut all_records = Vec::new();
    let mut summaries = Vec::new();
    for &s in &cfg.seeds {
        for (records, summary) in fedbatch::harness::sim::run_seed_comparison(&cfg, law, s, mode)? {
            all_records.extend(records);
            summaries.push(summary);
        }
    }
    // rows grouped by policy in config order, then by seed
    all_records.sort_by(|a, b| {
        let pa = cfg.policies.iter().position(|p| p.name() == a.policy);
        let pb = cfg.policies.iter().position(|p| p.name() == b.policy);
        pa.cmp(&pb)
            .then(a.seed.cmp(&b.seed))
            .then(a.round.cmp(&b.round))
    });

    let rows = summarize(&summaries);
    print!("{}", render_comparison(&rows));

    let mut csv = Vec::new();
    write_traces_csv(&mut csv, &all_records)?;
    write_out(&out, "traces.csv", &String::from_utf8(csv)?)?;
    write_out(&out, "summary.json", &serde_json::to_string_pretty(&rows)?)?;
    Ok(())
}

fn cmd_oracle(config: &Path, seed: u64, out: Option<PathBuf>) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let law = cfg.resolve_law(&config_dir(config))?;
    let sys = static_view(&cfg, seed)?;
    let k = sys.device_count();
    if k > 4 {
        bail!("oracle verification needs K <= 4 devices (config has {k})");
    }

    let opt = optimal_global_batch(&sys, &law, cfg.b_max)?;
    let b_max = cfg.b_max.unwrap_or_else(|| default_b_max(&sys, &law));
    let floor = law.feasible_batch_floor();
    let start = (k as u64).max(if floor < 1.0 {
        1
    } else {
        floor.floor() as u64 + 1
    });
    let oracle_b = brute_force_global_batch(&sys, &law, start..=b_max)?;
    let e2e_closed = exact_e2e(&sys, &law, opt.b_star)?;
    let e2e_oracle = exact_e2e(&sys, &law, oracle_b)?;
    let ratio = e2e_closed / e2e_oracle;

    // allocation check on the small-B prefix
    let hw = sys.params.hw();
    let quantum = hw
        / sys
            .profiles
            .iter()
            .map(|p| p.compute_speed)
            .fold(f64::INFINITY, f64::min);
    let mut checks = 0u64;
    let mut max_gap: f64 = 0.0;
    for b in start..=start.saturating_add(40).min(60) {
        let bf = brute_force_allocation(&sys, b)?;
        let alloc = sys.allocate(b, Default::default())?;
        max_gap = max_gap.max((alloc.round_latency - bf.round_latency).abs());
        checks += 1;
    }
    let passed = ratio <= 1.05 && max_gap <= quantum * (1.0 + 1e-9);

    let report = serde_json::json!({
        "B_star": opt.b_star,
        "oracle_argmin": oracle_b,
        "e2e_closed_form": e2e_closed,
        "e2e_oracle_min": e2e_oracle,
        "ratio": ratio,
        "allocation_checks": checks,
        "allocation_max_gap": max_gap,
        "rounding_quantum": quantum,
        "passed": passed,
    });
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    write_out(&out, "oracle.json", &json)?;
    if !passed {
        bail!("oracle verification failed");
    }
    Ok(())
}
