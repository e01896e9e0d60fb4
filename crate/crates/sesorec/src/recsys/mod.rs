//! Matrix-factorization recommenders sharing one minibatch gradient engine.
//!
//! The engine evaluates the social-regularized objective and its gradients
//! given three cross-party products (`U_B D_B^T`, `U S_B^T`, `U_B E_B^T`).
//! Plain training computes those products locally from the social graph;
//! secure training obtains the same numbers through the masked matrix
//! product protocol. Everything else about the trainer is identical, which
//! is what makes the secure/plain equivalence tests meaningful.

mod engine;
mod secure;
mod train;

pub use engine::{
    build_social_terms, grad_u, grad_v, objective, plain_products, predict, Hyperparams,
    LatentFactors, MinibatchView, SocialProducts, SocialTerms,
};
pub use secure::{
    serve_social_party, train_secure_loopback, train_secure_over_channel, SecureSource,
    SecureTrainConfig, ServeSummary,
};
pub use train::{
    load_checkpoint, save_checkpoint, train, CheckpointMeta, EpochRow, ModelKind, NoSocial,
    PlainSocial, SocialProductSource, TrainLog,
};
