//! Synthetic clustered rating/social instances for tests and benchmarks.
//!
//! Users belong to preference clusters; ratings are noisy inner products of
//! cluster and item vectors, and social edges connect mostly within-cluster
//! pairs. Social regularization genuinely helps on these instances, which is
//! what the end-to-end tests need.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{kfold_split, Rating, RatingDataset, SocialGraph};

#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub num_users: usize,
    pub num_items: usize,
    pub num_ratings: usize,
    pub num_clusters: usize,
    /// Latent dimension of the generating model.
    pub true_dim: usize,
    /// Probability that a within-cluster pair is connected.
    pub edge_prob: f64,
    /// Std of the additive rating noise.
    pub noise: f64,
    pub rating_min: f64,
    pub rating_max: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// Sparse per-user ratings (about six each) over clustered preferences:
    /// the regime where the social graph genuinely helps.
    fn default() -> Self {
        Self {
            num_users: 80,
            num_items: 50,
            num_ratings: 480,
            num_clusters: 8,
            true_dim: 3,
            edge_prob: 0.3,
            noise: 0.3,
            rating_min: 0.5,
            rating_max: 4.0,
            seed: 42,
        }
    }
}

/// A generated instance. The dataset already carries a 5-fold split.
pub fn generate(spec: &SyntheticSpec) -> (RatingDataset, SocialGraph) {
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, 1.0).unwrap();

    let cluster_of: Vec<usize> = (0..spec.num_users).map(|u| u % spec.num_clusters).collect();
    let cluster_pref: Vec<Vec<f64>> = (0..spec.num_clusters)
        .map(|_| {
            (0..spec.true_dim)
                .map(|_| normal.sample(&mut rng))
                .collect()
        })
        .collect();
    let item_vec: Vec<Vec<f64>> = (0..spec.num_items)
        .map(|_| {
            (0..spec.true_dim)
                .map(|_| normal.sample(&mut rng))
                .collect()
        })
        .collect();

    let mid = (spec.rating_min + spec.rating_max) / 2.0;
    let span = (spec.rating_max - spec.rating_min) / 2.0;
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    for u in 0..spec.num_users as u32 {
        for i in 0..spec.num_items as u32 {
            pairs.push((u, i));
        }
    }
    pairs.shuffle(&mut rng);
    pairs.truncate(spec.num_ratings);

    let mut ratings = Vec::with_capacity(pairs.len());
    for (u, i) in pairs {
        let dot: f64 = cluster_pref[cluster_of[u as usize]]
            .iter()
            .zip(&item_vec[i as usize])
            .map(|(a, b)| a * b)
            .sum();
        // squash the score into the rating scale, then perturb
        let base = mid + span * (dot / (1.0 + dot.abs()));
        let value =
            (base + spec.noise * normal.sample(&mut rng)).clamp(spec.rating_min, spec.rating_max);
        // quarter-star granularity, like real rating scales
        let value = (value * 4.0).round() / 4.0;
        ratings.push(Rating {
            user: u,
            item: i,
            value,
        });
    }

    let mut ds = RatingDataset {
        ratings,
        folds: Vec::new(),
        num_users: spec.num_users,
        num_items: spec.num_items,
        user_ids: (0..spec.num_users as i64).collect(),
        item_ids: (0..spec.num_items as i64).collect(),
        duplicates_dropped: 0,
    };
    kfold_split(&mut ds, 5, spec.seed ^ 0xf01d).unwrap();

    let mut graph = SocialGraph::empty(spec.num_users);
    for a in 0..spec.num_users as u32 {
        for b in (a + 1)..spec.num_users as u32 {
            let same = cluster_of[a as usize] == cluster_of[b as usize];
            let p = if same {
                spec.edge_prob
            } else {
                spec.edge_prob / 30.0
            };
            if rng.gen_bool(p) {
                graph.add_edge(a, b, 1.0);
            }
        }
    }
    graph.sort();
    (ds, graph)
}

/// Small fixed instance: `users` users, `ratings` ratings, and exactly
/// `edges` social edges (within-cluster pairs first).
pub fn small_instance(
    users: usize,
    items: usize,
    ratings: usize,
    edges: usize,
    seed: u64,
) -> (RatingDataset, SocialGraph) {
    let spec = SyntheticSpec {
        num_users: users,
        num_items: items,
        num_ratings: ratings,
        num_clusters: 2.max(users / 4),
        edge_prob: 1.0,
        seed,
        ..SyntheticSpec::default()
    };
    let (ds, full_graph) = generate(&spec);
    // keep exactly `edges` edges, deterministically
    let mut kept = SocialGraph::empty(users);
    let mut count = 0;
    'outer: for a in 0..users as u32 {
        for &(b, w) in full_graph.neighbors(a) {
            if b > a {
                kept.add_edge(a, b, w);
                count += 1;
                if count == edges {
                    break 'outer;
                }
            }
        }
    }
    kept.sort();
    (ds, kept)
}
