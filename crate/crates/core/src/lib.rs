//! Discrete factorization machines.
//!
//! A factorization machine scores a sparse feature vector `x` as
//! `w0 + sum_i w_i x_i + sum_{i<j} <v_i, v_j> x_i x_j`. The discrete variant
//! replaces every real embedding `v_i` with a binary code `b_i` in
//! `{+1,-1}^k`, so an interaction costs one XOR and one popcount per 64 bits
//! and a model of `n` features stores `n * ceil(k / 64)` words.
//!
//! The crate is `no_std` (it needs `alloc`) and holds the algorithms only:
//!
//! - [`data`]: sparse instances, datasets, inverted feature index, per-user split.
//! - [`fm`]: the real-valued model, its coordinate-descent trainer and the ridge solve.
//! - [`codes`]: packed code matrices and binary scoring.
//! - [`opt`]: the discrete learner (bitwise coordinate descent, delegate solve, warm start).
//! - [`metrics`]: NDCG@K.
//! - [`synthetic`]: planted and random data generators.
//!
//! File formats, timing and the command line live in the `dfm` crate.

#![no_std]

extern crate alloc;

pub mod codes;
pub mod config;
pub mod data;
pub mod error;
pub mod fm;
pub mod linalg;
pub mod metrics;
pub mod opt;
pub mod synthetic;

pub use codes::{CodeMatrix, DfmModel, ScorePath};
pub use config::{FmSolver, TrainConfig};
pub use data::{split_per_user, Dataset, FeatureIndex, FieldRange, SparseInstance, SparseVector};
pub use error::{Error, Result};
pub use fm::{fm_objective, fm_train, solve_w, FmModel};
pub use metrics::{ndcg_at_k, RankingRun};
pub use opt::{initialize, sgn, train_dfm, update_delegate, DelegateMatrix, OptState};

/// Anything that scores a sparse feature vector.
pub trait Predictor {
    fn n_features(&self) -> usize;
    fn predict(&self, x: &SparseVector) -> Result<f64>;
}
