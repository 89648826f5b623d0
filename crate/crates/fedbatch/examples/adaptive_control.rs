//! Channel-aware adaptive batch-size control over fast-fading rounds.
//!
//! Initializes the controller from channel statistics, then steps through
//! rounds with fresh channel draws, printing the threshold, the adaptive
//! global batch, the per-device split, and the round latency.
//!
//! Run: cargo run --example adaptive_control

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fedbatch::controller::{decide_round, init_controller};
use fedbatch::scaling::ScalingLaw;
use fedbatch::system::{draw_channel, observed_comm_latencies, DeviceProfile, SystemParams};

fn main() -> anyhow::Result<()> {
    let params = SystemParams {
        bandwidth_per_device: 1e7,
        noise_density: 1e-10,
        bits_per_param: 32,
        model_dim: 21840,
        flops_per_sample: 1e6,
        local_steps: 5,
        learning_rate: 0.1,
    };
    // four heterogeneous devices: fast/slow compute, strong/weak radios
    let profiles = vec![
        DeviceProfile {
            id: 0,
            compute_speed: 2e10,
            tx_power: 0.08,
            fading_scale: 0.45,
        },
        DeviceProfile {
            id: 1,
            compute_speed: 8e9,
            tx_power: 0.03,
            fading_scale: 0.30,
        },
        DeviceProfile {
            id: 2,
            compute_speed: 3e9,
            tx_power: 0.05,
            fading_scale: 0.25,
        },
        DeviceProfile {
            id: 3,
            compute_speed: 1e9,
            tx_power: 0.01,
            fading_scale: 0.20,
        },
    ];
    let law = ScalingLaw::new(34.5, 23.2, 0.5)?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(11);
    let state = init_controller(
        params,
        profiles.clone(),
        law,
        10_000,
        &mut init_rng,
        Some(400),
    )?;
    println!(
        "expected upload latencies [ms]: {:?}",
        state
            .expected_comm
            .iter()
            .map(|t| (t * 1e3).round())
            .collect::<Vec<_>>()
    );
    println!(
        "reference batch B_ref = {} (threshold at expectations {})\n",
        state.reference_batch, state.expected_threshold
    );

    let mut chan_rng = ChaCha8Rng::seed_from_u64(99);
    println!("round   B_th    B_n    allocation             tau_n [ms]");
    for round in 0..12 {
        let channel = draw_channel(&profiles, &mut chan_rng);
        let observed = observed_comm_latencies(&profiles, &channel, &params)?;
        let d = decide_round(&state, &observed)?;
        println!(
            "{round:5}   {:4}   {:4}    {:<20}   {:8.2}{}",
            d.threshold_used,
            d.global_batch,
            format!("{:?}", d.per_device),
            d.round_latency * 1e3,
            if d.threshold_used > state.reference_batch {
                "   <- threshold raised B to keep the straggler busy"
            } else {
                ""
            }
        );
    }
    Ok(())
}
