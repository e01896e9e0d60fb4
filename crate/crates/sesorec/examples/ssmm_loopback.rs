//! The three-message masked matrix product over a loopback channel: the
//! left party holds P, the right party holds Q, and only the left party
//! learns P * Q. Byte counters are checked against the closed-form message
//! sizes.
//!
//! Run with: cargo run --example ssmm_loopback

use sesorec::ring::{FixedPointConfig, RingMatrix};
use sesorec::share::{dense_payload_len, ssmm_left, ssmm_right, MaskPolicy, MaskSource};
use sesorec::transport::{loopback_pair, Channel, FRAME_HEADER_BYTES};

fn main() -> sesorec::Result<()> {
    let cfg = FixedPointConfig::default();
    let (x, y, z) = (6, 8, 5);

    let mut gen = MaskSource::from_seed(7);
    let p = gen.uniform_matrix(x, y, cfg);
    let q = gen.uniform_matrix(y, z, cfg);
    let expected = p.matmul(&q, cfg)?;

    let (mut left, mut right) = loopback_pair();
    let q_clone = q.clone();
    let server = std::thread::spawn(move || -> sesorec::Result<()> {
        let mut masks = MaskSource::from_seed(8);
        ssmm_right(
            &q_clone.into(),
            &MaskPolicy::dense(),
            cfg,
            &mut right,
            &mut masks,
        )?;
        Ok(())
    });

    let mut masks = MaskSource::from_seed(9);
    let product = ssmm_left(&p, cfg, &mut left, &mut masks, 1)?;
    server.join().unwrap()?;

    println!("product equals local ring product: {}", product == expected);

    let stats = left.stats();
    // left -> right: one frame with the masked P (x*y) and folded mask (x*y/2)
    let sent_expected =
        FRAME_HEADER_BYTES + dense_payload_len(x, y, cfg) + dense_payload_len(x, y / 2, cfg);
    // right -> left: the Q shares (y*z and y/2*z) plus the dense cross term (x*z)
    let recv_expected = FRAME_HEADER_BYTES
        + dense_payload_len(y, z, cfg)
        + dense_payload_len(y / 2, z, cfg)
        + FRAME_HEADER_BYTES
        + RingMatrix::byte_len(x, z, cfg);
    println!(
        "bytes sent:     {} (closed form {})",
        stats.bytes_sent, sent_expected
    );
    println!(
        "bytes received: {} (closed form {})",
        stats.bytes_received, recv_expected
    );
    assert_eq!(stats.bytes_sent as usize, sent_expected);
    assert_eq!(stats.bytes_received as usize, recv_expected);
    println!("byte counters match the message-size formulas exactly");
    Ok(())
}
