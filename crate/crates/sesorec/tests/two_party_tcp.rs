//! Secure training over a real TCP connection must behave exactly like the
//! loopback transport: same frames, same counters, bit-identical factors.

use sesorec::recsys::{
    serve_social_party, train_secure_loopback, train_secure_over_channel, Hyperparams,
    SecureTrainConfig,
};
use sesorec::ring::FixedPointConfig;
use sesorec::share::{MaskPolicy, MaskSource};
use sesorec::synthetic::{generate, SyntheticSpec};
use sesorec::transport::{connect_tcp, handshake, TcpChannel};

#[test]
fn tcp_training_is_bit_identical_to_loopback() {
    let (ds, graph) = generate(&SyntheticSpec {
        num_users: 30,
        num_items: 20,
        num_ratings: 240,
        ..SyntheticSpec::default()
    });
    let (train_idx, _) = ds.split(0);
    let ratings: Vec<_> = train_idx.iter().map(|&i| ds.ratings[i]).collect();
    let hp = Hyperparams {
        k: 5,
        max_iters: 6,
        batch_size: 32,
        ..Hyperparams::default()
    };
    let fp = FixedPointConfig::default();
    let cfg = SecureTrainConfig {
        fp,
        ..SecureTrainConfig::default()
    };

    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let graph_b = graph.clone();
    let server = std::thread::spawn(move || -> sesorec::Result<()> {
        let (stream, _) = listener.accept().unwrap();
        let mut ch = TcpChannel::from_stream(stream)?;
        handshake(&mut ch, fp)?;
        // different mask seed than loopback on purpose: the rating party's
        // result must not depend on the social party's randomness
        let mut masks = MaskSource::from_seed(0xd1ff);
        serve_social_party(&mut ch, &graph_b, fp, &MaskPolicy::sparse(), &mut masks)?;
        Ok(())
    });

    let mut ch = connect_tcp(None, Some(&addr.to_string()), fp).unwrap();
    let (tcp_factors, tcp_log) =
        train_secure_over_channel(&mut ch, &ratings, ds.num_users, ds.num_items, &hp, &cfg)
            .unwrap();
    server.join().unwrap().unwrap();

    let (loop_factors, _) = train_secure_loopback(
        &ratings,
        ds.num_users,
        ds.num_items,
        &graph,
        &hp,
        &cfg,
        &MaskPolicy::sparse(),
    )
    .unwrap();

    assert_eq!(tcp_factors.u, loop_factors.u);
    assert_eq!(tcp_factors.v, loop_factors.v);
    assert!(tcp_log.total_bytes > 0);
}
