//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fedbatch::controller::{decide_round, equilibrium_at_observed, init_controller_from_expected};
use fedbatch::harness::{
    parse_config_str, run_seed_comparison, summarize, write_traces_csv, ExperimentConfig,
    PolicySpec, SeedContext, SimulationMode,
};
use fedbatch::optimizer::{
    brute_force_allocation, default_b_max, exact_e2e, optimal_global_batch, RoundingMode,
    StaticSystem,
};
use fedbatch::scaling::{fit_scaling_law, goodness_of_fit, ConvergenceSample, ScalingLaw};
use fedbatch::system::{draw_channel, observed_comm_latencies, DeviceProfile, SystemParams};
use fedbatch::trainer::{
    convergence_bound, max_learning_rate, run_until_threshold, sample_round_batch_pairs,
    uniform_split, SyntheticTask,
};

fn report(criterion: &str, result: Result<(), String>) {
    match &result {
        Ok(()) => println!("acceptance {criterion}: PASS"),
        Err(msg) => println!("acceptance {criterion}: FAIL - {msg}"),
    }
    if let Err(msg) = result {
        panic!("{msg}");
    }
}

fn check(ok: bool, msg: impl Fn() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Unit-work system params (HW = 1) for the random optimizer instances.
fn unit_params() -> SystemParams {
    SystemParams {
        bandwidth_per_device: 1e7,
        noise_density: 1e-10,
        bits_per_param: 32,
        model_dim: 21840,
        flops_per_sample: 1.0,
        local_steps: 1,
        learning_rate: 0.1,
    }
}

fn unit_profile(id: usize, compute_speed: f64) -> DeviceProfile {
    DeviceProfile {
        id,
        compute_speed,
        tx_power: 0.05,
        fading_scale: 0.3,
    }
}

fn random_unit_system(rng: &mut ChaCha8Rng, k: usize) -> StaticSystem {
    let profiles: Vec<DeviceProfile> = (0..k)
        .map(|i| unit_profile(i, rng.random_range(1.0..10.0)))
        .collect();
    let comm: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..2.0)).collect();
    StaticSystem::new(unit_params(), profiles, comm).unwrap()
}

// ---------------------------------------------------------------------------
// 1. Latency-equilibrium oracle equivalence
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_equilibrium_oracle_equivalence() {
    let run = || -> Result<(), String> {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for instance in 0..120 {
            let k = rng.random_range(2..=4usize);
            let sys = random_unit_system(&mut rng, k);
            let b = rng.random_range(k as u64..=60);
            let quantum = 1.0
                / sys
                    .profiles
                    .iter()
                    .map(|p| p.compute_speed)
                    .fold(f64::INFINITY, f64::min);

            let bf = brute_force_allocation(&sys, b).map_err(|e| e.to_string())?;
            let tau_min = sys.tau_min(b).map_err(|e| e.to_string())?;
            check(
                bf.round_latency >= tau_min - 1e-9 && bf.round_latency <= tau_min + quantum + 1e-9,
                || {
                    format!(
                        "instance {instance}: oracle latency {} outside [{tau_min}, {}]",
                        bf.round_latency,
                        tau_min + quantum
                    )
                },
            )?;

            let alloc = sys
                .allocate(b, RoundingMode::Conserve)
                .map_err(|e| e.to_string())?;
            check(
                (alloc.round_latency - bf.round_latency).abs() <= quantum + 1e-9,
                || {
                    format!(
                        "instance {instance}: integerized latency {} vs oracle {} exceeds quantum {quantum}",
                        alloc.round_latency, bf.round_latency
                    )
                },
            )?;
        }
        Ok(())
    };
    report("1 [latency-equilibrium oracle equivalence]", run());
}

// ---------------------------------------------------------------------------
// 2. Closed-form global batch optimality
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_global_batch_optimality() {
    let run = || -> Result<(), String> {
        // worked instance, exact
        let sys = StaticSystem::new(
            unit_params(),
            vec![unit_profile(0, 2.0), unit_profile(1, 1.0)],
            vec![0.0, 1.0],
        )
        .unwrap();
        let law = ScalingLaw::new(34.5, 23.2, 0.5).unwrap();
        let opt = optimal_global_batch(&sys, &law, None).map_err(|e| e.to_string())?;
        check(opt.b_star == 93, || {
            format!("worked B* = {}, want 93", opt.b_star)
        })?;
        check(opt.per_device == vec![63, 30], || {
            format!("worked allocation {:?}, want [63, 30]", opt.per_device)
        })?;

        // random instances against the integer grid
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        for instance in 0..60 {
            let k = rng.random_range(2..=5usize);
            let sys = random_unit_system(&mut rng, k);
            let law = ScalingLaw::new(
                rng.random_range(5.0..60.0),
                rng.random_range(1.0..40.0),
                0.5,
            )
            .unwrap();
            let opt = optimal_global_batch(&sys, &law, None).map_err(|e| e.to_string())?;
            let b_max = default_b_max(&sys, &law);
            let floor = law.feasible_batch_floor();
            let start = (k as u64).max(if floor < 1.0 {
                1
            } else {
                floor.floor() as u64 + 1
            });
            let mut grid_min = f64::INFINITY;
            for b in start..=b_max {
                grid_min = grid_min.min(exact_e2e(&sys, &law, b).map_err(|e| e.to_string())?);
            }
            let at_star = exact_e2e(&sys, &law, opt.b_star).map_err(|e| e.to_string())?;
            check(at_star <= 1.05 * grid_min, || {
                format!(
                    "instance {instance}: exact e2e at B* = {} is {at_star}, grid min {grid_min}",
                    opt.b_star
                )
            })?;
        }
        Ok(())
    };
    report("2 [closed-form global batch optimality]", run());
}

// ---------------------------------------------------------------------------
// 3. Scaling-law fitting round trip
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_scaling_law_round_trip() {
    let run = || -> Result<(), String> {
        // noiseless recovery
        let truth = ScalingLaw::new(34.5, 23.2, 0.5).unwrap();
        let samples: Vec<ConvergenceSample> = [60u64, 80, 100, 150, 300]
            .iter()
            .map(|&b| ConvergenceSample {
                global_batch: b,
                rounds: truth.rounds_real(b as f64).unwrap(),
            })
            .collect();
        let fit = fit_scaling_law(&samples, 0.5).map_err(|e| e.to_string())?;
        check(
            (fit.law.alpha - 34.5).abs() <= 1e-9 * 34.5
                && (fit.law.beta - 23.2).abs() <= 1e-9 * 23.2,
            || format!("noiseless recovery off: {:?}", fit.law),
        )?;

        // 1% multiplicative noise
        let truth = ScalingLaw::new(30.0, 123.3, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        let noisy: Vec<ConvergenceSample> = [260u64, 280, 300, 330, 370, 420, 480, 550]
            .iter()
            .map(|&b| {
                let z: f64 = rng.random_range(-1.0..1.0);
                ConvergenceSample {
                    global_batch: b,
                    rounds: truth.rounds_real(b as f64).unwrap() * (1.0 + 0.01 * z),
                }
            })
            .collect();
        let fit = fit_scaling_law(&noisy, 0.5).map_err(|e| e.to_string())?;
        check(
            (fit.law.alpha - 30.0).abs() <= 0.05 * 30.0
                && (fit.law.beta - 123.3).abs() <= 0.05 * 123.3,
            || format!("noisy recovery off: {:?}", fit.law),
        )?;
        let r2 = goodness_of_fit(&fit.law, &noisy).map_err(|e| e.to_string())?;
        check(r2 >= 0.99, || format!("noisy R^2 = {r2}"))?;

        // paper parameters
        let law = ScalingLaw::new(34.5, 23.2, 0.5).unwrap();
        check(law.predict_rounds(100).unwrap() == 129, || {
            format!("predict_rounds(100) = {:?}", law.predict_rounds(100))
        })?;
        check((law.feasible_batch_floor() - 46.4).abs() < 1e-12, || {
            format!("floor = {}", law.feasible_batch_floor())
        })?;
        Ok(())
    };
    report("3 [scaling-law fitting round trip]", run());
}

// ---------------------------------------------------------------------------
// 4. Convergence bound holds empirically
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_convergence_bound_holds() {
    let run = || -> Result<(), String> {
        let task = SyntheticTask::ramp(20, 1.0, 4.0, 0.0, 1.0).unwrap();
        let devices = 10;
        let seeds = 20;
        let max_n = 50u64;
        let checkpoints = [1u64, 2, 5, 10, 20, 50];
        for steps in [1u32, 2, 5] {
            let lr = 0.9 * max_learning_rate(task.smoothness(), steps);
            for b in [20u64, 40, 80] {
                let split = uniform_split(b, devices);
                // seed-averaged running mean of the squared gradient norm
                let mut running = vec![0.0; max_n as usize];
                for seed in 0..seeds {
                    let mut rng = ChaCha8Rng::seed_from_u64(4000 + seed);
                    let runreport = run_until_threshold(
                        &task,
                        devices,
                        |_| split.clone(),
                        steps,
                        lr,
                        1e-12_f64.max(f64::MIN_POSITIVE),
                        max_n,
                        &mut rng,
                    )
                    .map_err(|e| e.to_string())?;
                    let mut acc = 0.0;
                    for (n, g2) in runreport.gradient_norm_history.iter().enumerate() {
                        acc += g2;
                        running[n] += acc / (n + 1) as f64;
                    }
                }
                for r in &mut running {
                    *r /= seeds as f64;
                }
                for &n in &checkpoints {
                    let bound = convergence_bound(&task, devices, steps, b, n, lr)
                        .map_err(|e| e.to_string())?;
                    let observed = running[(n - 1) as usize];
                    check(observed <= bound, || {
                        format!(
                            "H = {steps}, B = {b}, N = {n}: running mean {observed} exceeds bound {bound}"
                        )
                    })?;
                }
            }
        }
        Ok(())
    };
    report("4 [convergence bound holds empirically]", run());
}

// ---------------------------------------------------------------------------
// 5. Round-batch monotonicity and fit quality
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_round_batch_monotonicity() {
    let run = || -> Result<(), String> {
        let task = SyntheticTask::ramp(20, 1.0, 4.0, 0.0, 1.0).unwrap();
        let devices = 10;
        let steps = 5;
        let lr = 0.9 * max_learning_rate(task.smoothness(), steps);
        let epsilon = 0.02;
        let batches = [20u64, 40, 80, 160];
        let mut rng = ChaCha8Rng::seed_from_u64(505);
        let points = sample_round_batch_pairs(
            &task, &batches, 20, devices, steps, lr, epsilon, 20_000, &mut rng,
        )
        .map_err(|e| e.to_string())?;
        check(points.iter().all(|p| p.all_converged), || {
            "some trials hit max_rounds".to_string()
        })?;
        let rounds: Vec<f64> = points.iter().map(|p| p.sample.rounds).collect();
        check(rounds.windows(2).all(|w| w[1] < w[0]), || {
            format!("mean rounds not strictly decreasing: {rounds:?}")
        })?;
        let samples: Vec<ConvergenceSample> = points.iter().map(|p| p.sample).collect();
        let fit = fit_scaling_law(&samples, epsilon).map_err(|e| e.to_string())?;
        let r2 = goodness_of_fit(&fit.law, &samples).map_err(|e| e.to_string())?;
        check(r2 >= 0.9, || {
            format!("fitted R^2 = {r2} (law {:?})", fit.law)
        })?;
        Ok(())
    };
    report("5 [round-batch monotonicity and fit quality]", run());
}

// ---------------------------------------------------------------------------
// 6. Policy ordering on the heterogeneous fast-fading system
// ---------------------------------------------------------------------------

/// Ten heterogeneous devices drawn from the experimental ranges, fast
/// fading, the fitted MNIST-scale law, and the exemplified fixed baselines
/// (16 and 128 per device). The per-round capacity cap `b_max` contains
/// reference-batch inflation from tail-heavy latency expectations (the
/// exponential-gain Shannon model makes E[q/R] log-divergent, so sample
/// means of the upload latency are tail-dominated).
fn ordering_config() -> ExperimentConfig {
    parse_config_str(
        r#"{
            "system": {
                "bandwidth_per_device": 1e7,
                "noise_density": 1e-10,
                "bits_per_param": 32,
                "model_dim": 21840,
                "flops_per_sample": 1e6,
                "local_steps": 5,
                "learning_rate": 0.1
            },
            "devices": {"sample": {
                "count": 10,
                "tx_power": [0.01, 0.1],
                "fading_scale": [0.2, 0.5],
                "compute_speed": [1e9, 3e10]
            }},
            "law": {"alpha": 34.5, "beta": 23.2, "epsilon": 0.5},
            "policies": [
                {"kind": "proposed"},
                {"kind": "uniform_optimal"},
                {"kind": "fixed", "b": 16},
                {"kind": "fixed", "b": 128},
                {"kind": "dbfl", "b0": 16, "rho": 1.1, "cap": 1024}
            ],
            "seeds": [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15,
                      16, 17, 18, 19, 20, 21, 22, 23, 24, 25, 26, 27, 28, 29, 30],
            "max_rounds": 4000,
            "fading": "fast",
            "b_max": 400
        }"#,
    )
    .unwrap()
}

#[test]
fn criterion_6_policy_ordering() {
    let run = || -> Result<(), String> {
        let cfg = ordering_config();
        let law = cfg.resolve_law(std::path::Path::new(".")).unwrap();
        let mut summaries = Vec::new();
        let mut proposed_wins = 0usize;
        for &seed in &cfg.seeds {
            let runs = run_seed_comparison(&cfg, law, seed, SimulationMode::Credit)
                .map_err(|e| e.to_string())?;
            let per_seed: Vec<_> = runs.into_iter().map(|(_, s)| s).collect();
            let proposed = per_seed
                .iter()
                .find(|s| s.policy == "proposed")
                .ok_or("missing proposed run")?
                .e2e_latency;
            if per_seed
                .iter()
                .filter(|s| s.policy != "proposed")
                .all(|s| proposed < s.e2e_latency)
            {
                proposed_wins += 1;
            }
            summaries.extend(per_seed);
        }
        let rows = summarize(&summaries);
        let mean_of = |name: &str| {
            rows.iter()
                .find(|r| r.policy == name)
                .map(|r| r.mean_e2e_latency)
                .unwrap()
        };
        let proposed = mean_of("proposed");
        let uniform = mean_of("uniform_optimal");
        let best_fixed = ["fixed-16", "fixed-128"]
            .iter()
            .map(|n| mean_of(n))
            .fold(f64::INFINITY, f64::min);
        check(proposed <= uniform, || {
            format!("proposed mean {proposed} > uniform_optimal mean {uniform}")
        })?;
        check(uniform <= best_fixed, || {
            format!("uniform_optimal mean {uniform} > best fixed mean {best_fixed}")
        })?;
        check(proposed < uniform, || {
            "no strictly positive mean reduction over uniform_optimal".to_string()
        })?;
        let win_rate = proposed_wins as f64 / cfg.seeds.len() as f64;
        check(win_rate >= 0.9, || {
            format!("proposed strictly best in only {proposed_wins}/30 seeds")
        })?;
        Ok(())
    };
    report("6 [policy ordering under fast fading]", run());
}

// ---------------------------------------------------------------------------
// 7. Adaptive controller invariants over the criterion-6 rounds
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_adaptive_invariants() {
    let run = || -> Result<(), String> {
        let cfg = ordering_config();
        let law = cfg.resolve_law(std::path::Path::new(".")).unwrap();
        for &seed in &cfg.seeds {
            let ctx = SeedContext::new(&cfg, law, seed).map_err(|e| e.to_string())?;
            let (records, _) = ctx
                .run(&PolicySpec::Proposed, SimulationMode::Credit)
                .map_err(|e| e.to_string())?;
            let state = init_controller_from_expected(
                cfg.system,
                ctx.devices().to_vec(),
                law,
                ctx.expected_comm().to_vec(),
                cfg.b_max,
            )
            .map_err(|e| e.to_string())?;
            // replay the channel stream the simulation consumed
            let mut chan = fedbatch::harness::sim::channel_rng(seed);
            for record in &records {
                let channel = draw_channel(ctx.devices(), &mut chan);
                let observed = observed_comm_latencies(ctx.devices(), &channel, &cfg.system)
                    .map_err(|e| e.to_string())?;
                let decision = decide_round(&state, &observed).map_err(|e| e.to_string())?;
                check(decision.global_batch == record.global_batch, || {
                    format!(
                        "seed {seed} round {}: replay batch {} != trace {}",
                        record.round, decision.global_batch, record.global_batch
                    )
                })?;
                // exact max(B_ref, B_th)
                check(
                    decision.global_batch == state.reference_batch.max(decision.threshold_used),
                    || format!("seed {seed} round {}: adaptive max violated", record.round),
                )?;
                // conservation
                check(
                    decision.per_device.iter().sum::<u64>() == decision.global_batch,
                    || format!("seed {seed} round {}: sum b_k != B_n", record.round),
                )?;
                check(decision.per_device.iter().all(|&b| b >= 1), || {
                    format!("seed {seed} round {}: zero batch", record.round)
                })?;
                // real-valued equilibrium equalizes device latencies
                let real = equilibrium_at_observed(&state, decision.global_batch, &observed);
                let hw = cfg.system.hw();
                let lats: Vec<f64> = ctx
                    .devices()
                    .iter()
                    .zip(&observed)
                    .zip(&real)
                    .map(|((p, &t), &b)| t + hw * b / p.compute_speed)
                    .collect();
                let lo = lats.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = lats.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                check((hi - lo) <= 1e-9 * hi.abs().max(1e-300), || {
                    format!(
                        "seed {seed} round {}: equilibrium latencies spread [{lo}, {hi}]",
                        record.round
                    )
                })?;
                // integerization costs at most one rounding quantum over
                // the round's continuous equilibrium latency
                let quantum = hw
                    / ctx
                        .devices()
                        .iter()
                        .map(|p| p.compute_speed)
                        .fold(f64::INFINITY, f64::min);
                check(
                    decision.round_latency <= hi + quantum * (1.0 + 1e-9),
                    || {
                        format!(
                            "seed {seed} round {}: integer latency {} vs equilibrium {hi} + quantum {quantum}",
                            record.round, decision.round_latency
                        )
                    },
                )?;
                // raising the batch never predicts more rounds
                check(
                    law.predict_rounds(decision.global_batch).unwrap()
                        <= law.predict_rounds(state.reference_batch).unwrap(),
                    || format!("seed {seed} round {}: round count grew", record.round),
                )?;
            }
        }
        Ok(())
    };
    report("7 [adaptive controller invariants]", run());
}

// ---------------------------------------------------------------------------
// 8. Determinism and interface stability
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_determinism_and_validation() {
    let run = || -> Result<(), String> {
        let cfg = ordering_config();
        let law = cfg.resolve_law(std::path::Path::new(".")).unwrap();
        let trace_bytes = |seed: u64| -> Result<Vec<u8>, String> {
            let runs = run_seed_comparison(&cfg, law, seed, SimulationMode::Credit)
                .map_err(|e| e.to_string())?;
            let mut buf = Vec::new();
            for (records, _) in &runs {
                write_traces_csv(&mut buf, records).map_err(|e| e.to_string())?;
            }
            Ok(buf)
        };
        let a = trace_bytes(17)?;
        let b = trace_bytes(17)?;
        check(a == b, || {
            "identical (config, seed) produced different bytes".into()
        })?;
        check(!a.is_empty(), || "empty trace".into())?;

        // documented invariant violations are rejected with named errors
        let base = r#"{
            "system": {
                "bandwidth_per_device": 1e7,
                "noise_density": 1e-10,
                "bits_per_param": 32,
                "model_dim": 21840,
                "flops_per_sample": 1e6,
                "local_steps": 5,
                "learning_rate": 0.1
            },
            "devices": [{"compute_speed": 1e10, "tx_power": 0.05, "fading_scale": 0.3}],
            "law": {"alpha": 34.5, "beta": 23.2, "epsilon": 0.5},
            "policies": [{"kind": "proposed"}],
            "seeds": [1],
            "max_rounds": 100,
            "fading": "slow"
        }"#;
        check(parse_config_str(base).is_ok(), || {
            "base config rejected".into()
        })?;
        let cases: Vec<(&str, &str, &str)> = vec![
            (
                "bandwidth_per_device",
                "\"bandwidth_per_device\": 1e7",
                "\"bandwidth_per_device\": -1e7",
            ),
            (
                "noise_density",
                "\"noise_density\": 1e-10",
                "\"noise_density\": 0",
            ),
            ("local_steps", "\"local_steps\": 5", "\"local_steps\": 0"),
            (
                "compute_speed",
                "\"compute_speed\": 1e10",
                "\"compute_speed\": -1",
            ),
            ("alpha", "\"alpha\": 34.5", "\"alpha\": 0"),
            ("epsilon", "\"epsilon\": 0.5", "\"epsilon\": -0.5"),
            (
                "policies",
                "\"policies\": [{\"kind\": \"proposed\"}]",
                "\"policies\": []",
            ),
            ("seeds", "\"seeds\": [1]", "\"seeds\": []"),
            ("max_rounds", "\"max_rounds\": 100", "\"max_rounds\": 0"),
            (
                "rho",
                "\"policies\": [{\"kind\": \"proposed\"}]",
                "\"policies\": [{\"kind\": \"dbfl\", \"b0\": 16, \"rho\": 1.0}]",
            ),
            (
                "b",
                "\"policies\": [{\"kind\": \"proposed\"}]",
                "\"policies\": [{\"kind\": \"fixed\", \"b\": 0}]",
            ),
            (
                "unknown",
                "\"fading\": \"slow\"",
                "\"fading\": \"slow\", \"unknown\": 1",
            ),
        ];
        for (needle, from, to) in cases {
            let bad = base.replace(from, to);
            match parse_config_str(&bad) {
                Ok(_) => return Err(format!("invalid config ({needle}) was accepted")),
                Err(e) => {
                    let msg = e.to_string();
                    check(msg.contains(needle), || {
                        format!("error for {needle} does not name it: {msg}")
                    })?;
                }
            }
        }
        Ok(())
    };
    report("8 [determinism and interface stability]", run());
}

// ---------------------------------------------------------------------------
// sanity: the worked adaptive decisions from the controller
// ---------------------------------------------------------------------------

#[test]
fn worked_adaptive_decisions() {
    let params = unit_params();
    let profiles = vec![unit_profile(0, 2.0), unit_profile(1, 1.0)];
    let law = ScalingLaw::new(34.5, 23.2, 0.5).unwrap();
    let state = init_controller_from_expected(params, profiles, law, vec![0.0, 1.0], None).unwrap();
    assert_eq!(state.reference_batch, 93);
    let d = decide_round(&state, &[0.0, 5.0]).unwrap();
    assert_eq!((d.global_batch, d.per_device.clone()), (93, vec![65, 28]));
    let d = decide_round(&state, &[0.0, 50.0]).unwrap();
    assert_eq!((d.global_batch, d.per_device.clone()), (103, vec![102, 1]));
    assert_relative_eq!(d.round_latency, 51.0);
}
