//! Wireless link and latency model walkthrough.
//!
//! Builds a device with the experimental communication settings, draws
//! Rayleigh-fading channel gains, and prints Shannon rates, upload and
//! compute latencies, and the Monte Carlo expected upload latency.
//!
//! Run: cargo run --example channel_model

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fedbatch::system::{
    comm_latency, comp_latency, draw_channel, e2e_latency, expected_comm_latency,
    per_round_latency, transmission_rate, DeviceProfile, SystemParams,
};

fn main() -> anyhow::Result<()> {
    let params = SystemParams {
        bandwidth_per_device: 1e7, // 10 MHz sub-band
        noise_density: 1e-10,      // W/Hz
        bits_per_param: 32,
        model_dim: 21840,
        flops_per_sample: 1e6,
        local_steps: 5,
        learning_rate: 0.1,
    };
    let device = DeviceProfile {
        id: 0,
        compute_speed: 1e10, // 10 GFLOPs/s
        tx_power: 0.05,      // W
        fading_scale: 0.3,   // mean channel power gain
    };
    println!(
        "payload: {} params x {} bits = {} bits",
        params.model_dim,
        params.bits_per_param,
        params.payload_bits()
    );

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    println!("\n gain      rate [Mbit/s]   upload [ms]   compute@b=32 [ms]   round [ms]");
    let mut rounds = Vec::new();
    for _ in 0..8 {
        let gain = draw_channel(&[device], &mut rng).gains[0];
        let rate = transmission_rate(&device, gain, &params)?;
        let upload = comm_latency(rate, params.payload_bits() as f64)?;
        let compute = comp_latency(&device, 32, &params);
        let round = per_round_latency(&[upload], &[compute])?;
        println!(
            "{gain:7.4}   {:12.2}   {:11.3}   {:17.3}   {:10.3}",
            rate / 1e6,
            upload * 1e3,
            compute * 1e3,
            round.round_total * 1e3
        );
        rounds.push(round.round_total);
    }
    println!(
        "\ne2e over those rounds: {:.3} ms",
        e2e_latency(&rounds) * 1e3
    );

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let expected = expected_comm_latency(&device, &params, 10_000, &mut rng)?;
    println!(
        "expected upload latency (1e4 Monte Carlo draws): {:.3} ms",
        expected * 1e3
    );
    Ok(())
}
