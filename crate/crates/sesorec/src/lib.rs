//! Two-party secure social recommendation.
//!
//! A rating platform holds user-item ratings and trains a matrix
//! factorization model; a social platform holds a user-user trust graph.
//! The social regularization products the trainer needs cross the party
//! boundary only through a three-message secret-shared matrix
//! multiplication over Z_{2^l}, so neither side ever sees the other's raw
//! data.
//!
//! Modules:
//! - [`ring`]: Z_{2^l} arithmetic, fixed-point encoding, matrix wire formats
//! - [`share`]: the masked matrix product protocol (dense and sparse masks),
//!   the Beaver-triple baseline, leakage probes
//! - [`transport`]: framed loopback and TCP channels with byte accounting
//! - [`data`]: rating/social ingestion, filtering, k-fold splits
//! - [`recsys`]: the factorization trainer (plain, social, secure-social)
//! - [`metrics`]: RMSE and NDCG evaluation
//! - [`mod@bench`]: protocol timing harness
//! - [`run`]: the CLI command implementations
//!
//! Start with the runnable examples (`cargo run --release --example ...`):
//! `fixed_point_ring`, `ssmm_loopback`, `sparse_masking`, `leakage_probes`,
//! `tismm_triples`, `protocol_benchmark`, `train_secure_synthetic`,
//! `two_party_tcp`.

pub mod bench;
pub mod data;
pub mod error;
pub mod metrics;
pub mod recsys;
pub mod ring;
pub mod run;
pub mod share;
pub mod stats;
pub mod synthetic;
pub mod transport;

pub use error::{Error, Result};
