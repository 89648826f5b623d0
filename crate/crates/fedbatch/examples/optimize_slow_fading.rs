//! Closed-form optimal batch-size control for static channels, checked
//! against the brute-force oracles.
//!
//! Reproduces the worked two-device instance (f = [2, 1], T = [0, 1],
//! HW = 1, law (34.5, 23.2, 0.5)): B* = 93 with allocation [63, 30], and
//! sweeps the exact end-to-end latency to show the surrogate's optimum
//! matches the grid minimum.
//!
//! Run: cargo run --example optimize_slow_fading

use fedbatch::optimizer::{
    brute_force_allocation, brute_force_global_batch, exact_e2e, optimal_global_batch,
    surrogate_e2e, StaticSystem,
};
use fedbatch::scaling::ScalingLaw;
use fedbatch::system::{DeviceProfile, SystemParams};

fn main() -> anyhow::Result<()> {
    // unit-work parameters: H * W = 1
    let params = SystemParams {
        bandwidth_per_device: 1e7,
        noise_density: 1e-10,
        bits_per_param: 32,
        model_dim: 21840,
        flops_per_sample: 1.0,
        local_steps: 1,
        learning_rate: 0.1,
    };
    let profiles = vec![
        DeviceProfile {
            id: 0,
            compute_speed: 2.0,
            tx_power: 0.05,
            fading_scale: 0.3,
        },
        DeviceProfile {
            id: 1,
            compute_speed: 1.0,
            tx_power: 0.05,
            fading_scale: 0.3,
        },
    ];
    let sys = StaticSystem::new(params, profiles, vec![0.0, 1.0])?;
    let law = ScalingLaw::new(34.5, 23.2, 0.5)?;

    println!("tau_1b = {}", sys.tau_single_batch());
    println!("batch threshold B_th = {}", sys.batch_threshold());
    println!("feasibility floor B > {}", law.feasible_batch_floor());

    let opt = optimal_global_batch(&sys, &law, None)?;
    println!("\ncontinuous optimum B_eps = {:.3}", opt.b_epsilon);
    println!("{}", serde_json::to_string_pretty(&opt)?);

    println!("\n  B     N(B)   tau_min     exact e2e   surrogate");
    for b in [47u64, 60, 80, 90, 93, 94, 100, 120, 160] {
        println!(
            "{b:4}   {:4}   {:8.4}   {:9.2}   {:9.2}",
            law.predict_rounds(b)?,
            sys.tau_min(b)?,
            exact_e2e(&sys, &law, b)?,
            surrogate_e2e(&sys, &law, b as f64)?,
        );
    }

    let oracle_b = brute_force_global_batch(&sys, &law, 47..=300)?;
    println!(
        "\nbrute-force sweep argmin: B = {oracle_b} (e2e {:.2}); closed form B* = {} (e2e {:.2})",
        exact_e2e(&sys, &law, oracle_b)?,
        opt.b_star,
        exact_e2e(&sys, &law, opt.b_star)?,
    );

    let bf = brute_force_allocation(&sys, 8)?;
    let eq = sys.equilibrium_allocation(8)?;
    println!(
        "\nallocation oracle at B = 8: optimal {:?} (latency {}), continuous equilibrium {:?}",
        bf.per_device, bf.round_latency, eq
    );
    Ok(())
}
