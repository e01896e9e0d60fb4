//! Timing harness comparing the masked-share protocol against the
//! Beaver-triple baseline on square matrices, over loopback or local TCP.
//!
//! The timed region covers the full protocol run including message
//! (de)serialization and transport. Triple generation happens before the
//! clock starts and is reported separately; correctness is asserted against
//! the plaintext ring product on every run.

use std::fmt;
use std::net::TcpListener;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::ring::{FixedPointConfig, RingMatrix};
use crate::share::{
    ssmm_left, ssmm_right, tismm_left, tismm_right, MaskPolicy, MaskSource, TrustedInitializer,
};
use crate::transport::{loopback_pair, Channel, ChannelStats, TcpChannel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchProtocol {
    Ssmm,
    Tismm,
}

impl BenchProtocol {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ssmm" => Ok(BenchProtocol::Ssmm),
            "tismm" => Ok(BenchProtocol::Tismm),
            other => Err(Error::Config(format!(
                "unknown protocol {other:?} (expected ssmm or tismm)"
            ))),
        }
    }
}

impl fmt::Display for BenchProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchProtocol::Ssmm => "ssmm",
            BenchProtocol::Tismm => "tismm",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchTransport {
    Loopback,
    Tcp,
}

impl BenchTransport {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "loopback" => Ok(BenchTransport::Loopback),
            "tcp" => Ok(BenchTransport::Tcp),
            other => Err(Error::Config(format!(
                "unknown transport {other:?} (expected loopback or tcp)"
            ))),
        }
    }
}

impl fmt::Display for BenchTransport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchTransport::Loopback => "loopback",
            BenchTransport::Tcp => "tcp",
        })
    }
}

#[derive(Clone, Debug)]
pub struct BenchResult {
    pub protocol: BenchProtocol,
    pub transport: BenchTransport,
    pub dim: usize,
    /// Wall time of the protocol itself.
    pub seconds: f64,
    /// Triple pre-generation time (Beaver baseline only).
    pub setup_seconds: f64,
    pub left_stats: ChannelStats,
    pub correct: bool,
}

pub const BENCH_HEADER: &str =
    "protocol,transport,dim,seconds,setup_seconds,bytes_sent,bytes_received,correct";

impl BenchResult {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{},{},{}",
            self.protocol,
            self.transport,
            self.dim,
            self.seconds,
            self.setup_seconds,
            self.left_stats.bytes_sent,
            self.left_stats.bytes_received,
            self.correct
        )
    }
}

fn channels(transport: BenchTransport) -> Result<(Box<dyn Channel>, Box<dyn Channel>)> {
    match transport {
        BenchTransport::Loopback => {
            let (a, b) = loopback_pair();
            Ok((Box::new(a), Box::new(b)))
        }
        BenchTransport::Tcp => {
            let listener = TcpListener::bind("127.0.0.1:0")
                .map_err(|e| Error::Transport(format!("bind: {e}")))?;
            let addr = listener
                .local_addr()
                .map_err(|e| Error::Transport(format!("local_addr: {e}")))?;
            let accept = std::thread::spawn(move || -> Result<TcpChannel> {
                let (stream, _) = listener
                    .accept()
                    .map_err(|e| Error::Transport(format!("accept: {e}")))?;
                TcpChannel::from_stream(stream)
            });
            let client = TcpChannel::connect_to(addr)?;
            let server = accept
                .join()
                .map_err(|_| Error::Transport("accept thread panicked".into()))??;
            Ok((Box::new(client), Box::new(server)))
        }
    }
}

/// Time one `dim x dim` product under the chosen protocol and transport.
/// `dim` may be odd; the masked-share protocol pads internally.
pub fn run_bench(
    dim: usize,
    protocol: BenchProtocol,
    transport: BenchTransport,
    cfg: FixedPointConfig,
    seed: u64,
) -> Result<BenchResult> {
    if dim < 2 {
        return Err(Error::Config(
            "benchmark dimension must be at least 2".into(),
        ));
    }
    let mut gen = MaskSource::from_seed(seed);
    let p = gen.uniform_matrix(dim, dim, cfg);
    let q = gen.uniform_matrix(dim, dim, cfg);
    let expected = p.matmul(&q, cfg)?;

    let (mut left_ch, mut right_ch) = channels(transport)?;
    let (result, setup_seconds, seconds, left_stats) = match protocol {
        BenchProtocol::Ssmm => {
            let q_clone = q.clone();
            let right = std::thread::spawn(move || -> Result<()> {
                let mut masks = MaskSource::from_seed(seed ^ 0xb0b);
                ssmm_right(
                    &q_clone.into(),
                    &MaskPolicy::dense(),
                    cfg,
                    right_ch.as_mut(),
                    &mut masks,
                )?;
                Ok(())
            });
            let mut masks = MaskSource::from_seed(seed ^ 0xa11ce);
            let started = Instant::now();
            let product = ssmm_left(&p, cfg, left_ch.as_mut(), &mut masks, 1)?;
            let seconds = started.elapsed().as_secs_f64();
            right
                .join()
                .map_err(|_| Error::Protocol("right party thread panicked".into()))??;
            (product, 0.0, seconds, left_ch.stats())
        }
        BenchProtocol::Tismm => {
            let setup_started = Instant::now();
            let mut init = TrustedInitializer::from_seed(seed ^ 0x711, cfg);
            let (mut left_triple, mut right_triple) = init.issue(dim, dim, dim)?;
            let setup_seconds = setup_started.elapsed().as_secs_f64();
            let q_clone = q.clone();
            let right = std::thread::spawn(move || -> Result<RingMatrix> {
                tismm_right(&q_clone, &mut right_triple, cfg, right_ch.as_mut(), 1)
            });
            let started = Instant::now();
            let m = tismm_left(&p, &mut left_triple, cfg, left_ch.as_mut(), 1)?;
            let n = right
                .join()
                .map_err(|_| Error::Protocol("right party thread panicked".into()))??;
            let product = m.add(&n, cfg);
            let seconds = started.elapsed().as_secs_f64();
            (product, setup_seconds, seconds, left_ch.stats())
        }
    };

    Ok(BenchResult {
        protocol,
        transport,
        dim,
        seconds,
        setup_seconds,
        left_stats,
        correct: result == expected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_protocols_correct_at_dim_100() {
        let cfg = FixedPointConfig::default();
        for protocol in [BenchProtocol::Ssmm, BenchProtocol::Tismm] {
            let r = run_bench(100, protocol, BenchTransport::Loopback, cfg, 5).unwrap();
            assert!(r.correct, "{protocol} incorrect");
            assert!(r.seconds > 0.0);
        }
    }

    #[test]
    fn odd_dimension_is_padded_and_correct() {
        let cfg = FixedPointConfig::default();
        let r = run_bench(33, BenchProtocol::Ssmm, BenchTransport::Loopback, cfg, 6).unwrap();
        assert!(r.correct);
    }

    #[test]
    fn tcp_transport_works() {
        let cfg = FixedPointConfig::default();
        let r = run_bench(16, BenchProtocol::Ssmm, BenchTransport::Tcp, cfg, 7).unwrap();
        assert!(r.correct);
        assert!(r.left_stats.bytes_sent > 0);
    }
}
