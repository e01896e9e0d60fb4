//! What each party can actually derive from a protocol transcript: the left
//! party learns exactly the difference of Q's even and odd rows, the right
//! party exactly the sum of P's even and odd columns — and nothing more,
//! demonstrated by comparing real transcripts against an ideal-world
//! simulation that only knows the leaked term.
//!
//! Run with: cargo run --example leakage_probes

use sesorec::ring::FixedPointConfig;
use sesorec::share::{
    left_leakage, left_start, right_leakage, right_start, simulate_right_bundle, MaskPolicy,
    MaskSource,
};
use sesorec::stats::{chi_square_two_sample, top_bits_bucket};

fn main() {
    let cfg = FixedPointConfig::default();
    let mut masks = MaskSource::from_seed(33);

    let q = masks.uniform_matrix(6, 4, cfg);
    let (_, right_bundle) = right_start(&q.clone().into(), &MaskPolicy::dense(), cfg, &mut masks);
    let leaked_to_left = left_leakage(&right_bundle, cfg);
    let (q_odd, q_even) = q.odd_even_rows();
    println!(
        "left party derives Q_even - Q_odd exactly: {}",
        leaked_to_left == q_even.sub(&q_odd, cfg)
    );

    let p = masks.uniform_matrix(3, 6, cfg);
    let (_, left_bundle) = left_start(&p, cfg, &mut masks);
    let leaked_to_right = right_leakage(&left_bundle, cfg);
    let (p_odd, p_even) = p.odd_even_cols();
    println!(
        "right party derives P_even + P_odd exactly: {}",
        leaked_to_right == p_even.add(&p_odd, cfg)
    );

    // Beyond that term the transcript is simulatable: bucket a fixed entry of
    // the real share and of the simulated share over many protocol runs and
    // compare the empirical distributions.
    let q_small = masks.uniform_matrix(2, 1, cfg);
    let rounds = 100_000;
    let buckets = 16;
    let mut real = vec![0u64; buckets];
    let mut ideal = vec![0u64; buckets];
    for _ in 0..rounds {
        let (_, rb) = right_start(
            &q_small.clone().into(),
            &MaskPolicy::dense(),
            cfg,
            &mut masks,
        );
        let sim = simulate_right_bundle(&q_small, cfg, &mut masks);
        let real_word = rb.masked.to_dense().get(0, 0).0;
        let sim_word = sim.masked.to_dense().get(0, 0).0;
        real[top_bits_bucket(real_word, cfg.ring_bits(), 4)] += 1;
        ideal[top_bits_bucket(sim_word, cfg.ring_bits(), 4)] += 1;
    }
    let p_value = chi_square_two_sample(&real, &ideal);
    println!("real vs simulated transcript, two-sample chi-square p = {p_value:.4}");
    println!("indistinguishable at the 1% level: {}", p_value > 0.01);
}
