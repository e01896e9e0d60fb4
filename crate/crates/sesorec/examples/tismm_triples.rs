//! The trusted-initializer baseline: a third role pre-distributes shares of
//! correlated random matrices (A0, B0, C0 = A0*B0); the parties mask their
//! inputs with them and end up with additive shares of the product. Each
//! triple works exactly once.
//!
//! Run with: cargo run --example tismm_triples

use sesorec::ring::FixedPointConfig;
use sesorec::share::{tismm_execute, MaskSource, TrustedInitializer};

fn main() -> sesorec::Result<()> {
    let cfg = FixedPointConfig::default();
    let mut gen = MaskSource::from_seed(11);
    let p = gen.uniform_matrix(4, 6, cfg);
    let q = gen.uniform_matrix(6, 3, cfg);

    let (m, n) = tismm_execute(&p, &q, cfg, 99)?;
    let reconstructed = m.add(&n, cfg);
    println!(
        "shares reconstruct the exact ring product: {}",
        reconstructed == p.matmul(&q, cfg)?
    );

    // Neither share alone is the product; they only mean something together.
    println!(
        "left share alone equals the product: {}",
        m == p.matmul(&q, cfg)?
    );

    // Triples are single-use: a second invocation with the same triple fails
    // before anything crosses the wire.
    let mut init = TrustedInitializer::from_seed(1, cfg);
    let (mut left_triple, _right_triple) = init.issue(2, 2, 2)?;
    let (mut ch, other) = sesorec::transport::loopback_pair();
    drop(other); // peer gone: the first run spends the triple, then fails on recv
    let first = sesorec::share::tismm_left(
        &sesorec::ring::RingMatrix::zeros(2, 2),
        &mut left_triple,
        cfg,
        &mut ch,
        0,
    );
    println!(
        "first use consumed the triple: {}",
        first.is_err() && left_triple.is_used()
    );
    let second = sesorec::share::tismm_left(
        &sesorec::ring::RingMatrix::zeros(2, 2),
        &mut left_triple,
        cfg,
        &mut ch,
        1,
    );
    println!("reusing a triple is rejected: {}", second.is_err());
    Ok(())
}
