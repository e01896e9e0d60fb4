//! Chi-square tests used to certify that masked shares look uniform and that
//! real transcripts match their ideal-world simulation.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Goodness-of-fit p-value of observed bucket counts against the uniform
/// distribution over the buckets.
pub fn chi_square_uniform(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 || counts.len() < 2 {
        return 1.0;
    }
    let expected = total as f64 / counts.len() as f64;
    let statistic: f64 = counts
        .iter()
        .map(|&o| {
            let d = o as f64 - expected;
            d * d / expected
        })
        .sum();
    p_value(statistic, counts.len() as f64 - 1.0)
}

/// Two-sample homogeneity p-value: do the two bucketed samples come from the
/// same distribution?
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> f64 {
    assert_eq!(a.len(), b.len(), "samples must share the bucket layout");
    let total_a: u64 = a.iter().sum();
    let total_b: u64 = b.iter().sum();
    if total_a == 0 || total_b == 0 {
        return 1.0;
    }
    let grand = (total_a + total_b) as f64;
    let mut statistic = 0.0;
    let mut dof = -1i64;
    for (&oa, &ob) in a.iter().zip(b) {
        let pooled = (oa + ob) as f64;
        if pooled == 0.0 {
            continue;
        }
        dof += 1;
        let ea = pooled * total_a as f64 / grand;
        let eb = pooled * total_b as f64 / grand;
        statistic += (oa as f64 - ea).powi(2) / ea + (ob as f64 - eb).powi(2) / eb;
    }
    if dof < 1 {
        return 1.0;
    }
    p_value(statistic, dof as f64)
}

fn p_value(statistic: f64, dof: f64) -> f64 {
    let dist = ChiSquared::new(dof).expect("positive degrees of freedom");
    1.0 - dist.cdf(statistic)
}

/// Bucket a ring word by its top `bits` bits (relative to the ring width).
pub fn top_bits_bucket(raw: u64, ring_bits: u32, bits: u32) -> usize {
    (raw >> (ring_bits - bits)) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn uniform_counts_pass() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut counts = vec![0u64; 64];
        for _ in 0..100_000 {
            counts[rng.gen_range(0..64)] += 1;
        }
        assert!(chi_square_uniform(&counts) > 0.01);
    }

    #[test]
    fn skewed_counts_fail() {
        let mut counts = vec![1000u64; 16];
        counts[0] = 3000;
        assert!(chi_square_uniform(&counts) < 1e-6);
    }

    #[test]
    fn two_sample_same_source_passes() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut a = vec![0u64; 16];
        let mut b = vec![0u64; 16];
        for _ in 0..50_000 {
            a[rng.gen_range(0..16)] += 1;
            b[rng.gen_range(0..16)] += 1;
        }
        assert!(chi_square_two_sample(&a, &b) > 0.01);
    }

    #[test]
    fn two_sample_different_sources_fail() {
        let a = vec![5000u64; 8];
        let mut b = vec![5000u64; 8];
        b[3] = 9000;
        assert!(chi_square_two_sample(&a, &b) < 1e-6);
    }

    #[test]
    fn bucketing_uses_top_bits() {
        assert_eq!(top_bits_bucket(u64::MAX, 64, 4), 15);
        assert_eq!(top_bits_bucket(0, 64, 4), 0);
        assert_eq!(top_bits_bucket(0x8000_0000, 32, 1), 1);
    }
}
