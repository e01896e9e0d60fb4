//! Rating-prediction metrics: RMSE and NDCG@n over held-out folds.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// One scored test record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub user: u32,
    pub item: u32,
    pub truth: f64,
    pub predicted: f64,
}

/// Nonempty set of finite predictions.
#[derive(Clone, Debug, Default)]
pub struct PredictionSet {
    records: Vec<Prediction>,
}

impl PredictionSet {
    pub fn new(records: Vec<Prediction>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Data("empty prediction set".into()));
        }
        if records.iter().any(|r| !r.predicted.is_finite()) {
            return Err(Error::Data("non-finite prediction".into()));
        }
        Ok(Self { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Prediction] {
        &self.records
    }
}

/// Root mean square error over all records.
pub fn rmse(ps: &PredictionSet) -> f64 {
    let sum: f64 = ps
        .records
        .iter()
        .map(|r| (r.truth - r.predicted).powi(2))
        .sum();
    (sum / ps.records.len() as f64).sqrt()
}

/// NDCG@n with gain `2^rating - 1`, averaged per user with equal weight.
///
/// Each user's test items are ranked by predicted score descending, ties
/// broken by ascending item id; users with fewer than `n` items use all of
/// them. The normalizer is the ideal (truth-ordered) ranking, so a perfect
/// ranking scores 1.
pub fn ndcg_at_n(ps: &PredictionSet, n: usize) -> f64 {
    let mut by_user: BTreeMap<u32, Vec<&Prediction>> = BTreeMap::new();
    for r in &ps.records {
        by_user.entry(r.user).or_default().push(r);
    }
    let mut total = 0.0;
    for (_, mut items) in by_user.clone() {
        items.sort_by(|a, b| {
            b.predicted
                .partial_cmp(&a.predicted)
                .expect("finite predictions")
                .then(a.item.cmp(&b.item))
        });
        let gain = dcg(items.iter().map(|r| r.truth), n);
        let mut truths: Vec<f64> = items.iter().map(|r| r.truth).collect();
        truths.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let ideal = dcg(truths.into_iter(), n);
        // all-zero gains make any order vacuously perfect
        total += if ideal == 0.0 { 1.0 } else { gain / ideal };
    }
    total / by_user.len() as f64
}

fn dcg(truths: impl Iterator<Item = f64>, n: usize) -> f64 {
    truths
        .take(n)
        .enumerate()
        .map(|(i, r)| (2f64.powf(r) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// One row of the evaluation report CSV.
#[derive(Clone, Debug)]
pub struct ReportRow {
    pub model: String,
    pub fold: u8,
    pub rmse: f64,
    pub ndcg10: f64,
    pub train_seconds: f64,
    pub bytes_communicated: u64,
}

pub const REPORT_HEADER: &str = "model,fold,rmse,ndcg@10,train_seconds,bytes_communicated";

impl ReportRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.3},{}",
            self.model,
            self.fold,
            self.rmse,
            self.ndcg10,
            self.train_seconds,
            self.bytes_communicated
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn rec(user: u32, item: u32, truth: f64, predicted: f64) -> Prediction {
        Prediction {
            user,
            item,
            truth,
            predicted,
        }
    }

    #[test]
    fn rmse_examples() {
        let perfect = PredictionSet::new(vec![rec(0, 0, 3.0, 3.0), rec(0, 1, 1.0, 1.0)]).unwrap();
        assert_eq!(rmse(&perfect), 0.0);

        let single = PredictionSet::new(vec![rec(0, 0, 4.0, 2.0)]).unwrap();
        assert_eq!(rmse(&single), 2.0);

        let hand = PredictionSet::new(vec![
            rec(0, 0, 1.0, 2.0),
            rec(0, 1, 3.0, 3.5),
            rec(1, 0, 4.0, 2.0),
            rec(1, 1, 2.0, 2.0),
            rec(2, 0, 5.0, 4.0),
        ])
        .unwrap();
        let oracle = ((1.0f64 + 0.25 + 4.0 + 0.0 + 1.0) / 5.0).sqrt();
        assert_relative_eq!(rmse(&hand), oracle, epsilon = 1e-12);
    }

    #[test]
    fn prediction_set_rejects_empty_and_nonfinite() {
        assert!(PredictionSet::new(vec![]).is_err());
        assert!(PredictionSet::new(vec![rec(0, 0, 1.0, f64::NAN)]).is_err());
    }

    #[test]
    fn ndcg_perfect_ranking_scores_one() {
        let ps = PredictionSet::new(vec![
            rec(0, 0, 4.0, 4.0),
            rec(0, 1, 3.0, 3.0),
            rec(0, 2, 1.0, 1.0),
        ])
        .unwrap();
        assert_relative_eq!(ndcg_at_n(&ps, 10), 1.0);
    }

    #[test]
    fn ndcg_single_item_user_is_always_one() {
        let ps = PredictionSet::new(vec![rec(0, 0, 4.0, -100.0)]).unwrap();
        assert_relative_eq!(ndcg_at_n(&ps, 10), 1.0);
    }

    #[test]
    fn ndcg_matches_enumeration_oracle_on_swap() {
        // four items, prediction swaps the top two
        let truths = [4.0, 3.0, 2.0, 1.0];
        let preds = [3.0, 3.5, 2.0, 1.0];
        let ps = PredictionSet::new(
            (0..4)
                .map(|i| rec(0, i as u32, truths[i], preds[i]))
                .collect(),
        )
        .unwrap();

        // oracle: DCG of the prediction-induced order / max DCG over all 4! orders
        let order = [1usize, 0, 2, 3]; // by predicted desc
        let dcg_of = |idx: &[usize]| -> f64 {
            idx.iter()
                .enumerate()
                .map(|(pos, &i)| (2f64.powf(truths[i]) - 1.0) / ((pos + 2) as f64).log2())
                .sum()
        };
        let mut best: f64 = 0.0;
        let mut perm = [0usize, 1, 2, 3];
        // Heap's algorithm over 4 elements
        fn heaps(k: usize, arr: &mut [usize; 4], best: &mut f64, f: &dyn Fn(&[usize]) -> f64) {
            if k == 1 {
                *best = best.max(f(arr));
                return;
            }
            for i in 0..k {
                heaps(k - 1, arr, best, f);
                if k % 2 == 0 {
                    arr.swap(i, k - 1);
                } else {
                    arr.swap(0, k - 1);
                }
            }
        }
        heaps(4, &mut perm, &mut best, &dcg_of);
        let oracle = dcg_of(&order) / best;
        assert_relative_eq!(ndcg_at_n(&ps, 10), oracle, epsilon = 1e-12);
        assert!(oracle < 1.0);
    }

    #[test]
    fn ndcg_ties_break_by_ascending_item_id() {
        // equal predictions: item 0 (truth 4) must rank before item 1 (truth 1)
        let ps = PredictionSet::new(vec![rec(0, 0, 4.0, 2.0), rec(0, 1, 1.0, 2.0)]).unwrap();
        assert_relative_eq!(ndcg_at_n(&ps, 10), 1.0);
    }

    proptest! {
        #[test]
        fn ndcg_in_unit_interval_and_argsort_invariant(
            truths in proptest::collection::vec(0.0f64..5.0, 2..12),
            preds in proptest::collection::vec(-10.0f64..10.0, 12),
            scale in 0.1f64..5.0,
        ) {
            let n = truths.len();
            let recs: Vec<Prediction> = (0..n)
                .map(|i| rec((i % 3) as u32, i as u32, truths[i], preds[i]))
                .collect();
            let ps = PredictionSet::new(recs.clone()).unwrap();
            let v = ndcg_at_n(&ps, 10);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));

            // strictly monotone transform of scores leaves the ranking alone
            let transformed: Vec<Prediction> = recs
                .iter()
                .map(|r| Prediction { predicted: scale * r.predicted + 1.0, ..*r })
                .collect();
            let ps2 = PredictionSet::new(transformed).unwrap();
            prop_assert!((v - ndcg_at_n(&ps2, 10)).abs() < 1e-12);
        }

        #[test]
        fn rmse_order_invariant_and_scales_linearly(
            errs in proptest::collection::vec(-3.0f64..3.0, 1..20),
            k in 0.1f64..4.0,
        ) {
            let recs: Vec<Prediction> = errs
                .iter()
                .enumerate()
                .map(|(i, &e)| rec(0, i as u32, 3.0, 3.0 + e))
                .collect();
            let base = rmse(&PredictionSet::new(recs.clone()).unwrap());

            let mut shuffled = recs.clone();
            shuffled.reverse();
            let same = rmse(&PredictionSet::new(shuffled).unwrap());
            prop_assert!((base - same).abs() < 1e-12);

            let scaled: Vec<Prediction> = recs
                .iter()
                .map(|r| Prediction { predicted: 3.0 + k * (r.predicted - 3.0), ..*r })
                .collect();
            let scaled_rmse = rmse(&PredictionSet::new(scaled).unwrap());
            prop_assert!((scaled_rmse - k * base).abs() < 1e-9);
        }
    }
}
