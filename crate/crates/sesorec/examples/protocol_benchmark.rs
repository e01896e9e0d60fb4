//! Head-to-head timing of the masked-share protocol against the
//! Beaver-triple baseline at a configurable square dimension.
//!
//! Run with: cargo run --release --example protocol_benchmark -- [dim]

use sesorec::bench::{run_bench, BenchProtocol, BenchTransport, BENCH_HEADER};
use sesorec::ring::FixedPointConfig;

fn main() -> sesorec::Result<()> {
    let dim: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("dimension must be a number"))
        .unwrap_or(300);
    let cfg = FixedPointConfig::default();

    println!("{BENCH_HEADER}");
    let mut times = [0.0f64; 2];
    for (i, protocol) in [BenchProtocol::Ssmm, BenchProtocol::Tismm]
        .iter()
        .enumerate()
    {
        let r = run_bench(dim, *protocol, BenchTransport::Loopback, cfg, 1)?;
        assert!(r.correct, "{protocol} produced a wrong product");
        times[i] = r.seconds;
        println!("{}", r.to_csv());
    }
    println!(
        "\nmasked-share protocol is {:.2}x faster than the triple baseline at dim {dim}",
        times[1] / times[0]
    );
    println!("(triple generation time is excluded from the baseline's protocol time)");
    Ok(())
}
