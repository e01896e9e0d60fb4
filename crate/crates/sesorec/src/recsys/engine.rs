//! The minibatch objective, its gradients, and the social terms they need.
//!
//! Factor matrices are K x n with one column per user/item. For a batch with
//! user set `U_B` and item set `V_B`, the loss is
//!
//! ```text
//! L = 1/2 |I_B o (R_B - U_B^T V_B)|_F^2
//!   + g/2 <U_B, U_B D_B^T> - g <U_B, U S_B^T> + g/2 <U_B, U_B E_B^T>
//!   + l/2 (|U_B|_F^2 + |V_B|_F^2)
//! ```
//!
//! with `<.,.>` the entry-wise inner product, `D_B` the diagonal of batch
//! users' total tie strength, `S_B` their rows of the social matrix, and
//! `E_B` the diagonal of tie strength flowing back into batch users. The
//! gradient treats the right factor of each social product as a constant,
//! so the three products are plain inputs here; how they are computed
//! (locally or through the secure protocol) is the caller's business.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Rating, SocialGraph};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Hyperparams {
    /// Latent dimension K.
    pub k: usize,
    /// Social regularization strength.
    pub gamma: f64,
    /// L2 regularization strength.
    pub lambda: f64,
    /// Learning rate.
    pub theta: f64,
    pub batch_size: usize,
    /// Number of passes over the training ratings.
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            k: 10,
            gamma: 1.0,
            lambda: 0.05,
            theta: 0.02,
            batch_size: 64,
            max_iters: 50,
            seed: 42,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("latent dimension must be at least 1".into()));
        }
        if self.gamma < 0.0 || self.lambda < 0.0 {
            return Err(Error::Config(
                "regularization strengths must be >= 0".into(),
            ));
        }
        if self.theta <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// User factors U (K x I) and item factors V (K x J); column i is user i's
/// latent vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentFactors {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl LatentFactors {
    /// Gaussian initialization, mean 0 and std 0.01, deterministic per seed.
    pub fn init(k: usize, num_users: usize, num_items: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.01).unwrap();
        let u = DMatrix::from_fn(k, num_users, |_, _| normal.sample(&mut rng));
        let v = DMatrix::from_fn(k, num_items, |_, _| normal.sample(&mut rng));
        Self { u, v }
    }

    pub fn k(&self) -> usize {
        self.u.nrows()
    }
}

/// Predicted rating: the inner product of the user and item factors.
pub fn predict(factors: &LatentFactors, user: u32, item: u32) -> Result<f64> {
    if user as usize >= factors.u.ncols() {
        return Err(Error::Data(format!("unknown user {user}")));
    }
    if item as usize >= factors.v.ncols() {
        return Err(Error::Data(format!("unknown item {item}")));
    }
    Ok(factors
        .u
        .column(user as usize)
        .dot(&factors.v.column(item as usize)))
}

/// One minibatch restricted to its own users and items.
#[derive(Clone, Debug)]
pub struct MinibatchView {
    /// Batch users, sorted ascending; column order of all batch matrices.
    pub user_ids: Vec<u32>,
    /// Batch items, sorted ascending.
    pub item_ids: Vec<u32>,
    /// Ratings, |U_B| x |V_B|, zero where unobserved.
    pub ratings: DMatrix<f64>,
    /// 0/1 indicator of observed entries, same shape.
    pub indicator: DMatrix<f64>,
}

impl MinibatchView {
    pub fn build(batch: &[Rating]) -> Self {
        let mut user_ids: Vec<u32> = batch.iter().map(|r| r.user).collect();
        user_ids.sort_unstable();
        user_ids.dedup();
        let mut item_ids: Vec<u32> = batch.iter().map(|r| r.item).collect();
        item_ids.sort_unstable();
        item_ids.dedup();
        let upos = |u: u32| user_ids.binary_search(&u).expect("batch user");
        let ipos = |i: u32| item_ids.binary_search(&i).expect("batch item");
        let mut ratings = DMatrix::zeros(user_ids.len(), item_ids.len());
        let mut indicator = DMatrix::zeros(user_ids.len(), item_ids.len());
        for r in batch {
            ratings[(upos(r.user), ipos(r.item))] = r.value;
            indicator[(upos(r.user), ipos(r.item))] = 1.0;
        }
        Self {
            user_ids,
            item_ids,
            ratings,
            indicator,
        }
    }

    /// Gather the batch columns of a factor matrix.
    pub fn gather(&self, m: &DMatrix<f64>, ids: &[u32]) -> DMatrix<f64> {
        DMatrix::from_fn(m.nrows(), ids.len(), |r, c| m[(r, ids[c] as usize)])
    }
}

/// Social quantities for one batch, all indexed by batch-user position:
/// `row_sums[b] = sum_f s_bf`, `rows[b]` the batch user's social row, and
/// `back_sums[b] = sum_{b' in batch} s_{b'b}`. Built by the social party.
#[derive(Clone, Debug, PartialEq)]
pub struct SocialTerms {
    pub row_sums: Vec<f64>,
    pub rows: Vec<Vec<(u32, f64)>>,
    pub back_sums: Vec<f64>,
}

pub fn build_social_terms(graph: &SocialGraph, batch_users: &[u32]) -> Result<SocialTerms> {
    for &u in batch_users {
        if u as usize >= graph.num_users() {
            return Err(Error::Data(format!("unknown user {u} in batch")));
        }
    }
    let pos: std::collections::HashMap<u32, usize> = batch_users
        .iter()
        .enumerate()
        .map(|(i, &u)| (u, i))
        .collect();
    let mut row_sums = vec![0.0; batch_users.len()];
    let mut rows = Vec::with_capacity(batch_users.len());
    let mut back_sums = vec![0.0; batch_users.len()];
    for (b, &u) in batch_users.iter().enumerate() {
        let neighbors = graph.neighbors(u);
        row_sums[b] = neighbors.iter().map(|&(_, w)| w).sum();
        rows.push(neighbors.to_vec());
        for &(f, w) in neighbors {
            if let Some(&fb) = pos.get(&f) {
                back_sums[fb] += w;
            }
        }
    }
    Ok(SocialTerms {
        row_sums,
        rows,
        back_sums,
    })
}

/// The three cross-party products the gradient needs, K x |U_B| each:
/// `self_weighted = U_B D_B^T`, `cross = U S_B^T`, `back_weighted = U_B E_B^T`.
#[derive(Clone, Debug, PartialEq)]
pub struct SocialProducts {
    pub self_weighted: DMatrix<f64>,
    pub cross: DMatrix<f64>,
    pub back_weighted: DMatrix<f64>,
}

/// Compute the products in the clear (the unsecured social trainer).
pub fn plain_products(
    terms: &SocialTerms,
    u_full: &DMatrix<f64>,
    u_b: &DMatrix<f64>,
) -> SocialProducts {
    let k = u_b.nrows();
    let m = terms.row_sums.len();
    let mut self_weighted = DMatrix::zeros(k, m);
    let mut cross = DMatrix::zeros(k, m);
    let mut back_weighted = DMatrix::zeros(k, m);
    for b in 0..m {
        for r in 0..k {
            self_weighted[(r, b)] = terms.row_sums[b] * u_b[(r, b)];
            back_weighted[(r, b)] = terms.back_sums[b] * u_b[(r, b)];
        }
        for &(f, w) in &terms.rows[b] {
            for r in 0..k {
                cross[(r, b)] += w * u_full[(r, f as usize)];
            }
        }
    }
    SocialProducts {
        self_weighted,
        cross,
        back_weighted,
    }
}

fn masked_residual(batch: &MinibatchView, u_b: &DMatrix<f64>, v_b: &DMatrix<f64>) -> DMatrix<f64> {
    (&batch.ratings - u_b.tr_mul(v_b)).component_mul(&batch.indicator)
}

/// Batch loss at (`u_b`, `v_b`) with the social products held fixed.
pub fn objective(
    batch: &MinibatchView,
    u_b: &DMatrix<f64>,
    v_b: &DMatrix<f64>,
    social: Option<&SocialProducts>,
    hp: &Hyperparams,
) -> f64 {
    let resid = masked_residual(batch, u_b, v_b);
    let mut loss = 0.5 * resid.norm_squared();
    if let Some(p) = social {
        let g = hp.gamma;
        loss += 0.5 * g * u_b.dot(&p.self_weighted);
        loss -= g * u_b.dot(&p.cross);
        loss += 0.5 * g * u_b.dot(&p.back_weighted);
    }
    loss += 0.5 * hp.lambda * (u_b.norm_squared() + v_b.norm_squared());
    loss
}

/// Gradient of [`objective`] with respect to the batch user factors.
pub fn grad_u(
    batch: &MinibatchView,
    u_b: &DMatrix<f64>,
    v_b: &DMatrix<f64>,
    social: Option<&SocialProducts>,
    hp: &Hyperparams,
) -> DMatrix<f64> {
    let resid = masked_residual(batch, u_b, v_b);
    let mut grad = -(v_b * resid.transpose());
    if let Some(p) = social {
        let g = hp.gamma;
        grad += 0.5 * g * &p.self_weighted;
        grad -= g * &p.cross;
        grad += 0.5 * g * &p.back_weighted;
    }
    grad += hp.lambda * u_b;
    grad
}

/// Gradient of [`objective`] with respect to the batch item factors; local
/// to the rating party in every model.
pub fn grad_v(
    batch: &MinibatchView,
    u_b: &DMatrix<f64>,
    v_b: &DMatrix<f64>,
    hp: &Hyperparams,
) -> DMatrix<f64> {
    let resid = masked_residual(batch, u_b, v_b);
    -(u_b * resid) + hp.lambda * v_b
}
