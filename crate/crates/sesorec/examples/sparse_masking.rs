//! Sparse masking: when the right party's matrix is sparse (a social graph
//! usually is), it masks only the nonzero positions plus a few decoys per
//! row, so its shares stay sparse and the transfer stays small — without
//! revealing exact row occupancy.
//!
//! Run with: cargo run --example sparse_masking

use sesorec::ring::{encode_fixed, FixedPointConfig, MatrixData, SparseRingMatrix};
use sesorec::share::{right_start, MaskPolicy, MaskSource};

fn main() -> sesorec::Result<()> {
    let cfg = FixedPointConfig::default();
    let (rows, cols) = (10, 200);

    // a sparse social block: a handful of ties per user, some isolated users
    let mut q = SparseRingMatrix::new(rows, cols);
    let degrees = [3usize, 0, 5, 2, 8, 0, 1, 4, 6, 2];
    for (r, &d) in degrees.iter().enumerate() {
        for k in 0..d {
            q.push(
                r,
                ((r * 17 + k * 13) % cols) as u32,
                encode_fixed(1.0, cfg)?.0,
            );
        }
    }
    q.sort_rows();

    let policy = MaskPolicy::sparse();
    let mut masks = MaskSource::from_seed(21);
    let (_, bundle) = right_start(&q.clone().into(), &policy, cfg, &mut masks);

    println!("row | nonzeros | decoys | share support");
    println!("----+----------+--------+--------------");
    if let MatrixData::Sparse(masked) = &bundle.masked {
        for (r, &d) in degrees.iter().enumerate() {
            println!(
                "{r:>3} | {d:>8} | {:>6} | {:>13}",
                policy.decoys(d, cols),
                masked.row_nnz(r)
            );
        }
        let dense_words = rows * cols + (rows / 2) * cols;
        let sparse_words = masked.nnz()
            + match &bundle.folded {
                MatrixData::Sparse(f) => f.nnz(),
                MatrixData::Dense(_) => unreachable!(),
            };
        println!(
            "\nshare entries: {sparse_words} sparse vs {dense_words} dense \
             ({:.1}x smaller)",
            dense_words as f64 / sparse_words as f64
        );
        println!("empty rows carry decoys, so their emptiness is hidden");
    }
    Ok(())
}
