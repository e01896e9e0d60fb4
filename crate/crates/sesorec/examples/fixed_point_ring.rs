//! Fixed-point arithmetic in the ring: encoding, decoding, products, and
//! the truncation step that brings a product back to single scale.
//!
//! Run with: cargo run --example fixed_point_ring

use sesorec::ring::{decode_fixed, encode_fixed, truncate, FixedPointConfig, RingElem, RingMatrix};

fn main() -> sesorec::Result<()> {
    let cfg = FixedPointConfig::default();
    println!(
        "ring: Z_2^{}, fractional bits: {}\n",
        cfg.ring_bits(),
        cfg.frac_bits()
    );

    for x in [1.5, -2.25, 0.1, 3.14159] {
        let e = encode_fixed(x, cfg)?;
        println!(
            "encode({x:>8}) = {:>20}  decode -> {:.7}  (err {:.2e})",
            e.0,
            decode_fixed(e, cfg),
            (decode_fixed(e, cfg) - x).abs()
        );
    }

    // A product of two encodings carries twice the fractional bits until
    // truncated.
    let a = encode_fixed(1.5, cfg)?;
    let b = encode_fixed(2.5, cfg)?;
    let prod = RingElem(a.0.wrapping_mul(b.0));
    println!("\nraw product (double scale): {}", prod.0);
    let trunc = truncate(prod, cfg);
    println!("truncated, decoded:         {}", decode_fixed(trunc, cfg));

    // Matrix products wrap exactly in the ring.
    let m = RingMatrix::encode(
        &nalgebra::DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 0.25]),
        cfg,
    )?;
    let id = RingMatrix::identity_scaled(2, 1u64 << cfg.frac_bits());
    let back = id.matmul(&m, cfg)?.truncate(cfg).decode(cfg);
    println!("\nidentity * M decoded back:\n{back}");
    Ok(())
}
