//! Secure training over a real TCP connection on localhost: the social
//! party listens and serves masked shares, the rating party dials in and
//! trains. The result is bit-identical to the loopback transport because
//! the protocol is exact in the ring.
//!
//! Run with: cargo run --release --example two_party_tcp

use sesorec::recsys::{
    serve_social_party, train_secure_loopback, train_secure_over_channel, Hyperparams,
    SecureTrainConfig,
};
use sesorec::ring::FixedPointConfig;
use sesorec::share::{MaskPolicy, MaskSource};
use sesorec::synthetic::{generate, SyntheticSpec};
use sesorec::transport::{connect_tcp, handshake, TcpChannel};

fn main() -> sesorec::Result<()> {
    let (ds, graph) = generate(&SyntheticSpec {
        num_users: 30,
        num_items: 20,
        num_ratings: 240,
        ..SyntheticSpec::default()
    });
    let (train_idx, _) = ds.split(0);
    let train_ratings: Vec<_> = train_idx.iter().map(|&i| ds.ratings[i]).collect();
    let hp = Hyperparams {
        k: 6,
        max_iters: 10,
        batch_size: 32,
        ..Hyperparams::default()
    };
    let fp = FixedPointConfig::default();
    let cfg = SecureTrainConfig {
        fp,
        ..SecureTrainConfig::default()
    };

    // social party: listen on an ephemeral port and serve
    let listener = std::net::TcpListener::bind("127.0.0.1:0").expect("bind");
    let addr = listener.local_addr().expect("local addr");
    let graph_b = graph.clone();
    let server = std::thread::spawn(move || -> sesorec::Result<u64> {
        let (stream, _) = listener
            .accept()
            .map_err(|e| sesorec::Error::Transport(format!("accept: {e}")))?;
        let mut ch = TcpChannel::from_stream(stream)?;
        handshake(&mut ch, fp)?;
        let mut masks = MaskSource::from_seed(7);
        let summary = serve_social_party(&mut ch, &graph_b, fp, &MaskPolicy::sparse(), &mut masks)?;
        Ok(summary.stats.bytes_sent + summary.stats.bytes_received)
    });

    // rating party: dial and train
    let mut ch = connect_tcp(None, Some(&addr.to_string()), fp)?;
    let (tcp_factors, tcp_log) = train_secure_over_channel(
        &mut ch,
        &train_ratings,
        ds.num_users,
        ds.num_items,
        &hp,
        &cfg,
    )?;
    let served_bytes = server.join().unwrap()?;

    println!(
        "tcp training done: {} bytes exchanged ({} seen by the social party)",
        tcp_log.total_bytes, served_bytes
    );

    // the loopback transport gives bit-identical factors
    let (loop_factors, _) = train_secure_loopback(
        &train_ratings,
        ds.num_users,
        ds.num_items,
        &graph,
        &hp,
        &cfg,
        &MaskPolicy::sparse(),
    )?;
    println!(
        "tcp factors identical to loopback factors: {}",
        tcp_factors.u == loop_factors.u && tcp_factors.v == loop_factors.v
    );
    Ok(())
}
