//! Thin CLI over the library: dataset prep, training, evaluation, and the
//! protocol benchmark. All logic lives in `sesorec::run`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sesorec::recsys::Hyperparams;
use sesorec::run::{self, RoleKind, TrainArgs, TransportKind};

#[derive(Parser)]
#[command(
    name = "sesorec",
    version,
    about = "Two-party secure social recommendation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest raw rating/social files, filter, split, and write a
    /// processed dataset directory.
    Prepare {
        /// Manifest file (key=value: ratings, social, min_interactions, ...).
        #[arg(long, env = "SESOREC_MANIFEST")]
        manifest: PathBuf,
        #[arg(long, env = "SESOREC_OUT", default_value = "out/prepared")]
        out: PathBuf,
    },
    /// Train a model on a prepared dataset.
    Train(TrainFlags),
    /// Evaluate a checkpoint on a held-out fold and append to report.csv.
    Eval {
        #[arg(long, env = "SESOREC_CHECKPOINT")]
        checkpoint: PathBuf,
        #[arg(long, env = "SESOREC_DATASET")]
        dataset: PathBuf,
        #[arg(long, env = "SESOREC_FOLD", default_value_t = 0)]
        fold: u8,
        #[arg(long, env = "SESOREC_OUT", default_value = "out")]
        out: PathBuf,
    },
    /// Time one square secure matrix product.
    BenchSsmm {
        /// Matrix dimension.
        #[arg(long, env = "SESOREC_DIM", default_value_t = 100)]
        dim: usize,
        /// ssmm or tismm.
        #[arg(long, env = "SESOREC_PROTOCOL", default_value = "ssmm")]
        protocol: String,
        #[arg(long, env = "SESOREC_TRANSPORT", default_value = "loopback")]
        transport: String,
        #[arg(long, env = "SESOREC_SEED", default_value_t = 1)]
        seed: u64,
        #[arg(long, env = "SESOREC_OUT")]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainFlags {
    /// mf, soreg, or sesorec.
    #[arg(long, env = "SESOREC_MODEL", default_value = "sesorec")]
    model: String,
    /// Prepared dataset directory.
    #[arg(long, env = "SESOREC_DATASET")]
    dataset: PathBuf,
    /// Held-out fold.
    #[arg(long, env = "SESOREC_FOLD", default_value_t = 0)]
    fold: u8,
    /// Latent dimension.
    #[arg(long, env = "SESOREC_K", default_value_t = 10)]
    k: usize,
    /// Batch size.
    #[arg(long, env = "SESOREC_BATCH", default_value_t = 64)]
    batch: usize,
    /// Social regularization strength.
    #[arg(long, env = "SESOREC_GAMMA", default_value_t = 1.0)]
    gamma: f64,
    /// L2 regularization strength.
    #[arg(long, env = "SESOREC_LAMBDA", default_value_t = 0.05)]
    lambda: f64,
    /// Learning rate.
    #[arg(long, env = "SESOREC_LR", default_value_t = 0.02)]
    lr: f64,
    /// Training passes over the data.
    #[arg(long, env = "SESOREC_EPOCHS", default_value_t = 50)]
    epochs: usize,
    #[arg(long, env = "SESOREC_SEED", default_value_t = 42)]
    seed: u64,
    /// Ring width in bits (32 or 64).
    #[arg(long = "fp-bits", env = "SESOREC_FP_BITS", default_value_t = 64)]
    fp_bits: u32,
    /// Fractional bits of the fixed-point encoding.
    #[arg(long = "frac-bits", env = "SESOREC_FRAC_BITS", default_value_t = 20)]
    frac_bits: u32,
    /// loopback (both parties in-process) or tcp (two processes).
    #[arg(long, env = "SESOREC_TRANSPORT", default_value = "loopback")]
    transport: String,
    /// rating or social; required for tcp secure training.
    #[arg(long, env = "SESOREC_ROLE")]
    role: Option<String>,
    /// Bind address, e.g. 127.0.0.1:7000.
    #[arg(long, env = "SESOREC_LISTEN")]
    listen: Option<String>,
    /// Peer address to dial.
    #[arg(long, env = "SESOREC_PEER")]
    peer: Option<String>,
    /// Sync the user-factor share once per epoch instead of per batch
    /// (cheaper, approximate gradients).
    #[arg(long = "stale-u", env = "SESOREC_STALE_U", default_value_t = false)]
    stale_u: bool,
    /// Sweep gamma over {0.01, 0.1, 1, 10} and keep the best.
    #[arg(
        long = "sweep-gamma",
        env = "SESOREC_SWEEP_GAMMA",
        default_value_t = false
    )]
    sweep_gamma: bool,
    /// Grid-search lambda and the learning rate.
    #[arg(long, env = "SESOREC_GRID", default_value_t = false)]
    grid: bool,
    #[arg(long, env = "SESOREC_OUT", default_value = "out")]
    out: PathBuf,
}

impl TrainFlags {
    fn into_args(self) -> sesorec::Result<TrainArgs> {
        Ok(TrainArgs {
            model: self.model,
            dataset: self.dataset,
            fold: self.fold,
            hp: Hyperparams {
                k: self.k,
                gamma: self.gamma,
                lambda: self.lambda,
                theta: self.lr,
                batch_size: self.batch,
                max_iters: self.epochs,
                seed: self.seed,
            },
            ring_bits: self.fp_bits,
            frac_bits: self.frac_bits,
            transport: TransportKind::parse(&self.transport)?,
            role: self.role.as_deref().map(RoleKind::parse).transpose()?,
            listen: self.listen,
            peer: self.peer,
            stale_u: self.stale_u,
            sweep_gamma: self.sweep_gamma,
            grid: self.grid,
            out: self.out,
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> sesorec::Result<()> {
    match cli.command {
        Command::Prepare { manifest, out } => {
            let outcome = run::cmd_prepare(&manifest, &out)?;
            print!("{}", outcome.table());
            println!(
                "duplicates dropped: {}; ratings removed by filter: {}; edges kept: {}",
                outcome.duplicates_dropped, outcome.removed_by_filter, outcome.social_edges
            );
            Ok(())
        }
        Command::Train(flags) => {
            let args = flags.into_args()?;
            let outcome = run::cmd_train(&args)?;
            match (&outcome.checkpoint, outcome.rmse, outcome.ndcg10) {
                (Some(ckpt), Some(r), Some(n)) => {
                    println!(
                        "trained {} fold {}: rmse {:.4}, ndcg@10 {:.4}, {:.1}s, {} bytes",
                        outcome.model,
                        outcome.fold,
                        r,
                        n,
                        outcome.train_seconds,
                        outcome.bytes_communicated
                    );
                    println!("checkpoint: {}", ckpt.display());
                    if let (Some(g), Some(l), Some(t)) = (
                        outcome.chosen_gamma,
                        outcome.chosen_lambda,
                        outcome.chosen_theta,
                    ) {
                        println!("selected gamma={g} lambda={l} theta={t}");
                    }
                }
                _ => println!(
                    "social party served peer; {} bytes exchanged",
                    outcome.bytes_communicated
                ),
            }
            Ok(())
        }
        Command::Eval {
            checkpoint,
            dataset,
            fold,
            out,
        } => {
            let row = run::cmd_eval(&checkpoint, &dataset, fold, &out)?;
            println!("{}", sesorec::metrics::REPORT_HEADER);
            println!("{}", row.to_csv());
            Ok(())
        }
        Command::BenchSsmm {
            dim,
            protocol,
            transport,
            seed,
            out,
        } => {
            let r = run::cmd_bench(dim, &protocol, &transport, seed, out.as_deref())?;
            println!("{}", sesorec::bench::BENCH_HEADER);
            println!("{}", r.to_csv());
            Ok(())
        }
    }
}
