//! Implementations behind the CLI subcommands: dataset preparation,
//! training (single-process or two-party TCP), evaluation, and the protocol
//! benchmark. The binary itself only parses flags and dispatches here.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::bench::{run_bench, BenchProtocol, BenchResult, BenchTransport, BENCH_HEADER};
use crate::data::{
    filter_min_interactions, kfold_split, load_prepared, load_ratings, load_social, Manifest,
    RatingDataset, SocialGraph,
};
use crate::error::{Error, Result};
use crate::metrics::{ndcg_at_n, rmse, Prediction, PredictionSet, ReportRow, REPORT_HEADER};
use crate::recsys::{
    load_checkpoint, save_checkpoint, serve_social_party, train, train_secure_loopback,
    train_secure_over_channel, CheckpointMeta, Hyperparams, LatentFactors, ModelKind, NoSocial,
    PlainSocial, SecureTrainConfig, TrainLog,
};
use crate::ring::FixedPointConfig;
use crate::share::{MaskPolicy, MaskSource};
use crate::transport::connect_tcp;

pub const GAMMA_SWEEP: [f64; 4] = [0.01, 0.1, 1.0, 10.0];
pub const GRID_LAMBDA: [f64; 3] = [0.001, 0.01, 0.1];
pub const GRID_THETA: [f64; 3] = [0.005, 0.02, 0.05];

/// Prepared-dataset statistics, printed in the dataset table layout.
#[derive(Clone, Debug, Serialize)]
pub struct PrepareOutcome {
    pub users: usize,
    pub items: usize,
    pub ratings: usize,
    pub social_edges: usize,
    pub raw_social_relations: usize,
    pub duplicates_dropped: usize,
    pub removed_by_filter: usize,
    pub out_dir: PathBuf,
}

impl PrepareOutcome {
    pub fn table(&self) -> String {
        let mut t = String::new();
        writeln!(t, "| Dataset | #user | #item | #rating(A) | #social(B) |").unwrap();
        writeln!(t, "|---------|-------|-------|------------|------------|").unwrap();
        writeln!(
            t,
            "| {} | {} | {} | {} | {} |",
            self.out_dir.display(),
            self.users,
            self.items,
            self.ratings,
            self.raw_social_relations,
        )
        .unwrap();
        t
    }
}

/// Ingest, filter, split, and write a processed dataset directory.
pub fn cmd_prepare(manifest_path: &Path, out_dir: &Path) -> Result<PrepareOutcome> {
    let manifest = Manifest::load(manifest_path)?;
    let raw = load_ratings(Path::new(&manifest.ratings_path))?;
    let raw_len = raw.len();
    let mut ds = filter_min_interactions(&raw, manifest.min_interactions)?;
    let graph = load_social(Path::new(&manifest.social_path), &ds)?;
    kfold_split(&mut ds, manifest.folds, manifest.seed)?;
    crate::data::write_prepared(
        out_dir,
        &ds,
        &graph,
        &[
            ("threshold", manifest.min_interactions.to_string()),
            ("seed", manifest.seed.to_string()),
            ("folds", manifest.folds.to_string()),
            ("scale_min", manifest.scale_min.to_string()),
            ("scale_max", manifest.scale_max.to_string()),
        ],
    )?;
    Ok(PrepareOutcome {
        users: ds.num_users,
        items: ds.num_items,
        ratings: ds.len(),
        social_edges: graph.num_edges(),
        raw_social_relations: graph.raw_relations,
        duplicates_dropped: ds.duplicates_dropped,
        removed_by_filter: raw_len - ds.len(),
        out_dir: out_dir.to_path_buf(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TransportKind {
    Loopback,
    Tcp,
}

impl TransportKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "loopback" => Ok(TransportKind::Loopback),
            "tcp" => Ok(TransportKind::Tcp),
            other => Err(Error::Config(format!(
                "unknown transport {other:?} (expected loopback or tcp)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RoleKind {
    Rating,
    Social,
}

impl RoleKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rating" => Ok(RoleKind::Rating),
            "social" => Ok(RoleKind::Social),
            other => Err(Error::Config(format!(
                "unknown role {other:?} (expected rating or social)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainArgs {
    pub model: String,
    pub dataset: PathBuf,
    pub fold: u8,
    pub hp: Hyperparams,
    pub ring_bits: u32,
    pub frac_bits: u32,
    pub transport: TransportKind,
    pub role: Option<RoleKind>,
    pub listen: Option<String>,
    pub peer: Option<String>,
    pub stale_u: bool,
    pub sweep_gamma: bool,
    pub grid: bool,
    pub out: PathBuf,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainOutcome {
    pub model: String,
    pub fold: u8,
    pub checkpoint: Option<PathBuf>,
    pub rmse: Option<f64>,
    pub ndcg10: Option<f64>,
    pub chosen_gamma: Option<f64>,
    pub chosen_lambda: Option<f64>,
    pub chosen_theta: Option<f64>,
    pub train_seconds: f64,
    pub bytes_communicated: u64,
}

fn fp_config(args: &TrainArgs) -> Result<FixedPointConfig> {
    FixedPointConfig::new(args.ring_bits, args.frac_bits)
}

/// Train one model (possibly after a hyperparameter search) and write the
/// checkpoint, per-epoch log, and any search CSVs into the output directory.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome> {
    let model = ModelKind::parse(&args.model)?;
    let fp = fp_config(args)?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(
        args.out.join("run_config.json"),
        serde_json::to_vec_pretty(args).expect("args serialize"),
    )?;

    if args.transport == TransportKind::Tcp && model == ModelKind::SeSoRec {
        match args.role {
            Some(RoleKind::Social) => return run_social_role(args, fp),
            Some(RoleKind::Rating) => {}
            None => {
                return Err(Error::Config(
                    "secure training over tcp needs --role rating or --role social".into(),
                ))
            }
        }
    }

    let (ds, graph) = load_prepared(&args.dataset)?;
    validate_fold(&ds, args.fold)?;

    if args.sweep_gamma || args.grid {
        if args.transport == TransportKind::Tcp {
            return Err(Error::Config(
                "hyperparameter search runs single-process; use --transport loopback".into(),
            ));
        }
        return search_train(args, model, fp, &ds, &graph);
    }

    let (factors, log) = train_once(args, model, fp, &ds, &graph, &args.hp)?;
    finish_train(args, model, &ds, &graph, &args.hp, factors, log, None)
}

fn validate_fold(ds: &RatingDataset, fold: u8) -> Result<()> {
    if !ds.folds.contains(&fold) {
        return Err(Error::Config(format!(
            "fold {fold} is empty or out of range"
        )));
    }
    Ok(())
}

fn train_once(
    args: &TrainArgs,
    model: ModelKind,
    fp: FixedPointConfig,
    ds: &RatingDataset,
    graph: &SocialGraph,
    hp: &Hyperparams,
) -> Result<(LatentFactors, TrainLog)> {
    let (train_idx, _) = ds.split(args.fold);
    let train_ratings: Vec<_> = train_idx.iter().map(|&i| ds.ratings[i]).collect();
    match model {
        ModelKind::Mf => train(
            &train_ratings,
            ds.num_users,
            ds.num_items,
            hp,
            &mut NoSocial,
        ),
        ModelKind::Soreg => train(
            &train_ratings,
            ds.num_users,
            ds.num_items,
            hp,
            &mut PlainSocial { graph },
        ),
        ModelKind::SeSoRec => match args.transport {
            TransportKind::Loopback => {
                let cfg = SecureTrainConfig {
                    fp,
                    stale_u: args.stale_u,
                    mask_seed: hp.seed ^ 0x6d61_736b,
                };
                train_secure_loopback(
                    &train_ratings,
                    ds.num_users,
                    ds.num_items,
                    graph,
                    hp,
                    &cfg,
                    &MaskPolicy::sparse(),
                )
            }
            TransportKind::Tcp => {
                let mut ch = connect_tcp(args.listen.as_deref(), args.peer.as_deref(), fp)?;
                let cfg = SecureTrainConfig {
                    fp,
                    stale_u: args.stale_u,
                    mask_seed: hp.seed ^ 0x6d61_736b,
                };
                train_secure_over_channel(
                    &mut ch,
                    &train_ratings,
                    ds.num_users,
                    ds.num_items,
                    hp,
                    &cfg,
                )
            }
        },
    }
}

/// The social-party process: load the graph, serve until the peer is done.
fn run_social_role(args: &TrainArgs, fp: FixedPointConfig) -> Result<TrainOutcome> {
    let (_, graph) = load_prepared(&args.dataset)?;
    let mut ch = connect_tcp(args.listen.as_deref(), args.peer.as_deref(), fp)?;
    let mut masks = MaskSource::from_entropy();
    let summary = serve_social_party(&mut ch, &graph, fp, &MaskPolicy::sparse(), &mut masks)?;
    Ok(TrainOutcome {
        model: args.model.clone(),
        fold: args.fold,
        checkpoint: None,
        rmse: None,
        ndcg10: None,
        chosen_gamma: None,
        chosen_lambda: None,
        chosen_theta: None,
        train_seconds: 0.0,
        bytes_communicated: summary.stats.bytes_sent + summary.stats.bytes_received,
    })
}

#[allow(clippy::too_many_arguments)]
fn finish_train(
    args: &TrainArgs,
    model: ModelKind,
    ds: &RatingDataset,
    _graph: &SocialGraph,
    hp: &Hyperparams,
    factors: LatentFactors,
    log: TrainLog,
    chosen: Option<(f64, f64, f64)>,
) -> Result<TrainOutcome> {
    let train_mean = fold_train_mean(ds, args.fold);
    let (rmse_v, ndcg_v) = evaluate_factors(ds, args.fold, &factors, train_mean)?;
    let meta = CheckpointMeta {
        model: model.to_string(),
        hp: hp.clone(),
        num_users: ds.num_users,
        num_items: ds.num_items,
        fold: args.fold,
        train_seconds: log.total_seconds,
        bytes_communicated: log.total_bytes,
        train_mean,
    };
    let ckpt = args.out.join(format!("{model}_fold{}.ckpt", args.fold));
    save_checkpoint(&ckpt, &meta, &factors)?;
    let log_path = args
        .out
        .join(format!("train_log_{model}_fold{}.csv", args.fold));
    std::fs::write(&log_path, log.to_csv())?;
    Ok(TrainOutcome {
        model: model.to_string(),
        fold: args.fold,
        checkpoint: Some(ckpt),
        rmse: Some(rmse_v),
        ndcg10: Some(ndcg_v),
        chosen_gamma: chosen.map(|c| c.0),
        chosen_lambda: chosen.map(|c| c.1),
        chosen_theta: chosen.map(|c| c.2),
        train_seconds: log.total_seconds,
        bytes_communicated: log.total_bytes,
    })
}

/// Gamma sweep and/or lambda-theta grid, then a final run at the best point.
fn search_train(
    args: &TrainArgs,
    model: ModelKind,
    fp: FixedPointConfig,
    ds: &RatingDataset,
    graph: &SocialGraph,
) -> Result<TrainOutcome> {
    let mut best_hp = args.hp.clone();

    if args.grid {
        let mut rows = vec!["lambda,theta,rmse,ndcg@10".to_string()];
        let mut best = f64::INFINITY;
        let mut best_pair = (best_hp.lambda, best_hp.theta);
        for &lambda in &GRID_LAMBDA {
            for &theta in &GRID_THETA {
                let hp = Hyperparams {
                    lambda,
                    theta,
                    ..best_hp.clone()
                };
                let (r, n) = eval_candidate(args, model, fp, ds, graph, &hp)?;
                rows.push(format!("{lambda},{theta},{r:.6},{n:.6}"));
                if r < best {
                    best = r;
                    best_pair = (lambda, theta);
                }
            }
        }
        std::fs::write(args.out.join("grid_search.csv"), rows.join("\n") + "\n")?;
        best_hp.lambda = best_pair.0;
        best_hp.theta = best_pair.1;
    }

    if args.sweep_gamma && model != ModelKind::Mf {
        let mut rows = vec!["gamma,rmse,ndcg@10".to_string()];
        let mut best = f64::INFINITY;
        let mut best_gamma = best_hp.gamma;
        for &gamma in &GAMMA_SWEEP {
            let hp = Hyperparams {
                gamma,
                ..best_hp.clone()
            };
            let (r, n) = eval_candidate(args, model, fp, ds, graph, &hp)?;
            rows.push(format!("{gamma},{r:.6},{n:.6}"));
            if r < best {
                best = r;
                best_gamma = gamma;
            }
        }
        std::fs::write(args.out.join("gamma_sweep.csv"), rows.join("\n") + "\n")?;
        best_hp.gamma = best_gamma;
    }

    let (factors, log) = train_once(args, model, fp, ds, graph, &best_hp)?;
    finish_train(
        args,
        model,
        ds,
        graph,
        &best_hp,
        factors,
        log,
        Some((best_hp.gamma, best_hp.lambda, best_hp.theta)),
    )
}

/// Train one candidate and score it on the held-out fold; a diverging
/// candidate scores infinity instead of aborting the search.
fn eval_candidate(
    args: &TrainArgs,
    model: ModelKind,
    fp: FixedPointConfig,
    ds: &RatingDataset,
    graph: &SocialGraph,
    hp: &Hyperparams,
) -> Result<(f64, f64)> {
    match train_once(args, model, fp, ds, graph, hp) {
        Ok((factors, _)) => {
            let mean = fold_train_mean(ds, args.fold);
            evaluate_factors(ds, args.fold, &factors, mean)
        }
        Err(Error::Divergence(_)) => Ok((f64::INFINITY, 0.0)),
        Err(e) => Err(e),
    }
}

/// Mean training rating for one fold split; the cold-start prediction.
pub fn fold_train_mean(ds: &RatingDataset, fold: u8) -> f64 {
    let (train_idx, _) = ds.split(fold);
    let sum: f64 = train_idx.iter().map(|&i| ds.ratings[i].value).sum();
    sum / train_idx.len().max(1) as f64
}

/// Score factors on the held-out fold. Users or items without any training
/// rating fall back to the training mean.
pub fn evaluate_factors(
    ds: &RatingDataset,
    fold: u8,
    factors: &LatentFactors,
    train_mean: f64,
) -> Result<(f64, f64)> {
    let (train_idx, test_idx) = ds.split(fold);
    if test_idx.is_empty() {
        return Err(Error::Data(format!("fold {fold} has no test ratings")));
    }
    let mut user_seen = vec![false; ds.num_users];
    let mut item_seen = vec![false; ds.num_items];
    for &i in &train_idx {
        user_seen[ds.ratings[i].user as usize] = true;
        item_seen[ds.ratings[i].item as usize] = true;
    }
    let mut records = Vec::with_capacity(test_idx.len());
    for &i in &test_idx {
        let r = ds.ratings[i];
        let predicted = if user_seen[r.user as usize] && item_seen[r.item as usize] {
            crate::recsys::predict(factors, r.user, r.item)?
        } else {
            train_mean
        };
        records.push(Prediction {
            user: r.user,
            item: r.item,
            truth: r.value,
            predicted,
        });
    }
    let ps = PredictionSet::new(records)?;
    Ok((rmse(&ps), ndcg_at_n(&ps, 10)))
}

/// Evaluate a checkpoint on its dataset and append a row to report.csv.
pub fn cmd_eval(checkpoint: &Path, dataset: &Path, fold: u8, out: &Path) -> Result<ReportRow> {
    let (meta, factors) = load_checkpoint(checkpoint)?;
    let (ds, _) = load_prepared(dataset)?;
    if ds.num_users != meta.num_users || ds.num_items != meta.num_items {
        return Err(Error::Data(format!(
            "checkpoint is for {}x{} users/items, dataset has {}x{}",
            meta.num_users, meta.num_items, ds.num_users, ds.num_items
        )));
    }
    let (rmse_v, ndcg_v) = evaluate_factors(&ds, fold, &factors, meta.train_mean)?;
    let row = ReportRow {
        model: meta.model.clone(),
        fold,
        rmse: rmse_v,
        ndcg10: ndcg_v,
        train_seconds: meta.train_seconds,
        bytes_communicated: meta.bytes_communicated,
    };
    std::fs::create_dir_all(out)?;
    let report = out.join("report.csv");
    let mut contents = if report.exists() {
        std::fs::read_to_string(&report)?
    } else {
        format!("{REPORT_HEADER}\n")
    };
    contents.push_str(&row.to_csv());
    contents.push('\n');
    std::fs::write(&report, contents)?;
    Ok(row)
}

/// Run the protocol benchmark and append the timing row to bench.csv.
pub fn cmd_bench(
    dim: usize,
    protocol: &str,
    transport: &str,
    seed: u64,
    out: Option<&Path>,
) -> Result<BenchResult> {
    let protocol = BenchProtocol::parse(protocol)?;
    let transport = BenchTransport::parse(transport)?;
    let result = run_bench(dim, protocol, transport, FixedPointConfig::default(), seed)?;
    if !result.correct {
        return Err(Error::Protocol(format!(
            "benchmark product mismatch at dim {dim}"
        )));
    }
    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        let path = out.join("bench.csv");
        let mut contents = if path.exists() {
            std::fs::read_to_string(&path)?
        } else {
            format!("{BENCH_HEADER}\n")
        };
        contents.push_str(&result.to_csv());
        contents.push('\n');
        std::fs::write(&path, contents)?;
    }
    Ok(result)
}
