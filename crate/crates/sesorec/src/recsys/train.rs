//! Minibatch gradient-descent training loop shared by every model.
//!
//! The loop shuffles the training ratings each pass, walks consecutive
//! batches, asks a [`SocialProductSource`] for the cross-party products,
//! and applies the gradient updates. Which source is plugged in decides the
//! model: none (plain factorization), the local graph (unsecured social), or
//! the two-party protocol (secure social).

use std::fmt;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::{Rating, SocialGraph};
use crate::error::{Error, Result};

use super::engine::{
    build_social_terms, grad_u, grad_v, objective, plain_products, Hyperparams, LatentFactors,
    MinibatchView, SocialProducts,
};

/// Any factor entry beyond this magnitude aborts training as divergence.
const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Mf,
    Soreg,
    SeSoRec,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mf" => Ok(ModelKind::Mf),
            "soreg" => Ok(ModelKind::Soreg),
            "sesorec" => Ok(ModelKind::SeSoRec),
            other => Err(Error::Config(format!(
                "unknown model {other:?} (expected mf, soreg, or sesorec)"
            ))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Mf => "mf",
            ModelKind::Soreg => "soreg",
            ModelKind::SeSoRec => "sesorec",
        })
    }
}

/// Supplies the social products for each batch; the only thing that differs
/// between the plain and secure trainers.
pub trait SocialProductSource {
    /// Called once per pass with the current user factors.
    fn epoch_start(&mut self, _u: &DMatrix<f64>) -> Result<()> {
        Ok(())
    }

    fn batch_products(
        &mut self,
        batch_users: &[u32],
        u_full: &DMatrix<f64>,
        u_b: &DMatrix<f64>,
    ) -> Result<Option<SocialProducts>>;

    /// Called once after the last pass.
    fn finish(&mut self) -> Result<()> {
        Ok(())
    }

    /// Bytes moved across the party boundary so far.
    fn bytes_communicated(&self) -> u64 {
        0
    }
}

/// Plain matrix factorization: no social information at all.
pub struct NoSocial;

impl SocialProductSource for NoSocial {
    fn batch_products(
        &mut self,
        _batch_users: &[u32],
        _u_full: &DMatrix<f64>,
        _u_b: &DMatrix<f64>,
    ) -> Result<Option<SocialProducts>> {
        Ok(None)
    }
}

/// Unsecured social training: the graph sits next to the trainer.
pub struct PlainSocial<'g> {
    pub graph: &'g SocialGraph,
}

impl SocialProductSource for PlainSocial<'_> {
    fn batch_products(
        &mut self,
        batch_users: &[u32],
        u_full: &DMatrix<f64>,
        u_b: &DMatrix<f64>,
    ) -> Result<Option<SocialProducts>> {
        let terms = build_social_terms(self.graph, batch_users)?;
        Ok(Some(plain_products(&terms, u_full, u_b)))
    }
}

#[derive(Clone, Debug)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss: f64,
    pub seconds: f64,
    pub bytes: u64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRow>,
    pub total_seconds: f64,
    pub total_bytes: u64,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,loss,seconds,bytes";

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRAIN_LOG_HEADER);
        out.push('\n');
        for row in &self.epochs {
            out.push_str(&format!(
                "{},{:.6},{:.3},{}\n",
                row.epoch, row.loss, row.seconds, row.bytes
            ));
        }
        out
    }
}

/// Run minibatch gradient descent over the training ratings and return the
/// final factors plus the per-epoch log.
pub fn train(
    ratings: &[Rating],
    num_users: usize,
    num_items: usize,
    hp: &Hyperparams,
    source: &mut dyn SocialProductSource,
) -> Result<(LatentFactors, TrainLog)> {
    hp.validate()?;
    if ratings.is_empty() {
        return Err(Error::Data("no training ratings".into()));
    }
    let started = Instant::now();
    let mut factors = LatentFactors::init(hp.k, num_users, num_items, hp.seed);
    let mut order: Vec<usize> = (0..ratings.len()).collect();
    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(hp.seed.wrapping_add(0x5f5f));
    let mut log = TrainLog::default();
    let mut bytes_before_epoch = source.bytes_communicated();

    for epoch in 1..=hp.max_iters {
        let epoch_started = Instant::now();
        source.epoch_start(&factors.u)?;
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(hp.batch_size) {
            let batch: Vec<Rating> = chunk.iter().map(|&i| ratings[i]).collect();
            let view = MinibatchView::build(&batch);
            let mut u_b = view.gather(&factors.u, &view.user_ids);
            let mut v_b = view.gather(&factors.v, &view.item_ids);
            let products = source.batch_products(&view.user_ids, &factors.u, &u_b)?;
            epoch_loss += objective(&view, &u_b, &v_b, products.as_ref(), hp);
            let gu = grad_u(&view, &u_b, &v_b, products.as_ref(), hp);
            let gv = grad_v(&view, &u_b, &v_b, hp);
            u_b -= hp.theta * gu;
            v_b -= hp.theta * gv;
            scatter(&mut factors.u, &view.user_ids, &u_b, epoch)?;
            scatter(&mut factors.v, &view.item_ids, &v_b, epoch)?;
        }
        let bytes_now = source.bytes_communicated();
        log.epochs.push(EpochRow {
            epoch,
            loss: epoch_loss,
            seconds: epoch_started.elapsed().as_secs_f64(),
            bytes: bytes_now - bytes_before_epoch,
        });
        bytes_before_epoch = bytes_now;
    }
    source.finish()?;
    log.total_seconds = started.elapsed().as_secs_f64();
    log.total_bytes = source.bytes_communicated();
    Ok((factors, log))
}

fn scatter(
    target: &mut DMatrix<f64>,
    ids: &[u32],
    updated: &DMatrix<f64>,
    epoch: usize,
) -> Result<()> {
    for (j, &id) in ids.iter().enumerate() {
        for r in 0..target.nrows() {
            let v = updated[(r, j)];
            if !v.is_finite() || v.abs() > DIVERGENCE_LIMIT {
                return Err(Error::Divergence(format!(
                    "factor entry {v} for index {id} at epoch {epoch}; lower the learning rate"
                )));
            }
            target[(r, id as usize)] = v;
        }
    }
    Ok(())
}

/// Checkpoint metadata stored in the textual header.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub model: String,
    pub hp: Hyperparams,
    pub num_users: usize,
    pub num_items: usize,
    pub fold: u8,
    pub train_seconds: f64,
    pub bytes_communicated: u64,
    /// Mean training rating, the cold-start fallback prediction.
    pub train_mean: f64,
}

/// Write a checkpoint: textual key=value header, a `binary` marker line,
/// then U and V as little-endian f64 words (column-major).
pub fn save_checkpoint(path: &Path, meta: &CheckpointMeta, factors: &LatentFactors) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "sesorec-checkpoint v1")?;
    writeln!(w, "model={}", meta.model)?;
    writeln!(w, "k={}", meta.hp.k)?;
    writeln!(w, "users={}", meta.num_users)?;
    writeln!(w, "items={}", meta.num_items)?;
    writeln!(w, "gamma={}", meta.hp.gamma)?;
    writeln!(w, "lambda={}", meta.hp.lambda)?;
    writeln!(w, "theta={}", meta.hp.theta)?;
    writeln!(w, "batch={}", meta.hp.batch_size)?;
    writeln!(w, "epochs={}", meta.hp.max_iters)?;
    writeln!(w, "seed={}", meta.hp.seed)?;
    writeln!(w, "fold={}", meta.fold)?;
    writeln!(w, "train_seconds={}", meta.train_seconds)?;
    writeln!(w, "bytes_communicated={}", meta.bytes_communicated)?;
    writeln!(w, "train_mean={}", meta.train_mean)?;
    writeln!(w, "binary")?;
    for m in [&factors.u, &factors.v] {
        for v in m.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, LatentFactors)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    let marker = b"binary\n";
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::Data("checkpoint missing binary marker".into()))?;
    let header = std::str::from_utf8(&bytes[..split])
        .map_err(|_| Error::Data("checkpoint header is not utf-8".into()))?;
    let body = &bytes[split + marker.len()..];

    let mut kv = std::collections::HashMap::new();
    let mut lines = header.lines();
    let magic = lines.next().unwrap_or_default();
    if magic != "sesorec-checkpoint v1" {
        return Err(Error::Data(format!(
            "unrecognized checkpoint header {magic:?}"
        )));
    }
    for line in lines {
        if let Some((k, v)) = line.split_once('=') {
            kv.insert(k.to_string(), v.to_string());
        }
    }
    let get = |k: &str| -> Result<String> {
        kv.get(k)
            .cloned()
            .ok_or_else(|| Error::Data(format!("checkpoint missing {k}")))
    };
    let parse_f =
        |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::Data(format!("bad {k}"))) };
    let parse_u =
        |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::Data(format!("bad {k}"))) };
    let hp = Hyperparams {
        k: parse_u("k")?,
        gamma: parse_f("gamma")?,
        lambda: parse_f("lambda")?,
        theta: parse_f("theta")?,
        batch_size: parse_u("batch")?,
        max_iters: parse_u("epochs")?,
        seed: get("seed")?
            .parse()
            .map_err(|_| Error::Data("bad seed".into()))?,
    };
    let meta = CheckpointMeta {
        model: get("model")?,
        num_users: parse_u("users")?,
        num_items: parse_u("items")?,
        fold: get("fold")?
            .parse()
            .map_err(|_| Error::Data("bad fold".into()))?,
        train_seconds: parse_f("train_seconds")?,
        bytes_communicated: get("bytes_communicated")?
            .parse()
            .map_err(|_| Error::Data("bad bytes_communicated".into()))?,
        train_mean: parse_f("train_mean")?,
        hp,
    };
    let expect = meta.hp.k * (meta.num_users + meta.num_items) * 8;
    if body.len() != expect {
        return Err(Error::Data(format!(
            "checkpoint body has {} bytes, expected {expect}",
            body.len()
        )));
    }
    let mut vals = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let u = DMatrix::from_fn(meta.hp.k, meta.num_users, |_, _| vals.next().unwrap());
    // from_fn fills column-major, matching the save order of DMatrix::iter
    let v = DMatrix::from_fn(meta.hp.k, meta.num_items, |_, _| vals.next().unwrap());
    Ok((meta, LatentFactors { u, v }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;
    use approx::assert_relative_eq;

    #[test]
    fn loss_is_nonincreasing_on_toy_set_with_small_rate() {
        let (ds, _) = synthetic::small_instance(6, 8, 20, 0, 3);
        let hp = Hyperparams {
            k: 4,
            gamma: 0.0,
            lambda: 0.01,
            theta: 0.005,
            batch_size: 32, // single batch per epoch
            max_iters: 40,
            seed: 9,
        };
        let (_, log) = train(&ds.ratings, ds.num_users, ds.num_items, &hp, &mut NoSocial).unwrap();
        for pair in log.epochs.windows(2) {
            assert!(
                pair[1].loss <= pair[0].loss + 1e-9,
                "loss rose: {} -> {}",
                pair[0].loss,
                pair[1].loss
            );
        }
    }

    #[test]
    fn soreg_with_zero_gamma_matches_plain_mf() {
        let (ds, graph) = synthetic::small_instance(8, 10, 30, 12, 5);
        let hp = Hyperparams {
            k: 3,
            gamma: 0.0,
            lambda: 0.05,
            theta: 0.02,
            batch_size: 8,
            max_iters: 10,
            seed: 11,
        };
        let (mf, _) = train(&ds.ratings, ds.num_users, ds.num_items, &hp, &mut NoSocial).unwrap();
        let (soreg, _) = train(
            &ds.ratings,
            ds.num_users,
            ds.num_items,
            &hp,
            &mut PlainSocial { graph: &graph },
        )
        .unwrap();
        assert_relative_eq!(mf.u, soreg.u, epsilon = 1e-6);
        assert_relative_eq!(mf.v, soreg.v, epsilon = 1e-6);
    }

    #[test]
    fn gradient_step_pulls_connected_users_together() {
        // strong social pull, no ratings: the pairwise energy must drop
        let mut graph = SocialGraph::empty(4);
        graph.add_edge(0, 1, 1.0);
        graph.add_edge(1, 2, 1.0);
        graph.add_edge(2, 3, 1.0);
        graph.sort();
        let hp = Hyperparams {
            k: 2,
            gamma: 5.0,
            lambda: 0.0,
            theta: 0.01,
            batch_size: 16,
            max_iters: 1,
            seed: 13,
        };
        // one epoch over a batch containing every user, zero indicator
        let ratings: Vec<Rating> = (0..4)
            .map(|u| Rating {
                user: u,
                item: 0,
                value: 0.0,
            })
            .collect();
        let energy = |u: &DMatrix<f64>| -> f64 {
            let mut e = 0.0;
            for a in 0..4u32 {
                for b in 0..4u32 {
                    let s = graph.strength(a, b);
                    if s > 0.0 {
                        e += 0.5 * s * (u.column(a as usize) - u.column(b as usize)).norm_squared();
                    }
                }
            }
            e
        };
        let before = LatentFactors::init(hp.k, 4, 1, hp.seed);
        let start = energy(&before.u);
        let view = MinibatchView {
            user_ids: vec![0, 1, 2, 3],
            item_ids: vec![0],
            ratings: DMatrix::zeros(4, 1),
            indicator: DMatrix::zeros(4, 1),
        };
        let _ = ratings;
        let u_b = view.gather(&before.u, &view.user_ids);
        let v_b = view.gather(&before.v, &view.item_ids);
        let terms = build_social_terms(&graph, &view.user_ids).unwrap();
        let products = plain_products(&terms, &before.u, &u_b);
        let gu = grad_u(&view, &u_b, &v_b, Some(&products), &hp);
        let stepped = &u_b - hp.theta * gu;
        let mut after_u = before.u.clone();
        for (j, &id) in view.user_ids.iter().enumerate() {
            after_u.set_column(id as usize, &stepped.column(j));
        }
        assert!(
            energy(&after_u) < start,
            "social energy did not decrease: {start} -> {}",
            energy(&after_u)
        );
    }

    #[test]
    fn divergence_aborts_with_diagnostic() {
        let (ds, _) = synthetic::small_instance(6, 8, 20, 0, 3);
        let hp = Hyperparams {
            k: 4,
            gamma: 0.0,
            lambda: 0.0,
            theta: 50.0, // absurd learning rate
            batch_size: 8,
            max_iters: 200,
            seed: 1,
        };
        let err = train(&ds.ratings, ds.num_users, ds.num_items, &hp, &mut NoSocial);
        assert!(matches!(err, Err(Error::Divergence(_))));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let factors = LatentFactors::init(3, 5, 4, 77);
        let meta = CheckpointMeta {
            model: "soreg".into(),
            hp: Hyperparams {
                k: 3,
                ..Hyperparams::default()
            },
            num_users: 5,
            num_items: 4,
            fold: 2,
            train_seconds: 1.25,
            bytes_communicated: 4096,
            train_mean: 3.21,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &meta, &factors).unwrap();
        let (meta2, factors2) = load_checkpoint(&path).unwrap();
        assert_eq!(meta2, meta);
        assert_eq!(factors2.u, factors.u);
        assert_eq!(factors2.v, factors.v);
    }

    #[test]
    fn training_is_deterministic_for_a_seed() {
        let (ds, graph) = synthetic::small_instance(8, 10, 30, 12, 5);
        let hp = Hyperparams {
            max_iters: 5,
            ..Hyperparams::default()
        };
        let run = || {
            train(
                &ds.ratings,
                ds.num_users,
                ds.num_items,
                &hp,
                &mut PlainSocial { graph: &graph },
            )
            .unwrap()
            .0
        };
        let a = run();
        let b = run();
        assert_eq!(a.u, b.u);
        assert_eq!(a.v, b.v);
    }
}
