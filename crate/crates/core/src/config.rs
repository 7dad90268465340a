use alloc::format;

use crate::error::{Error, Result};

/// Code lengths swept by the evaluation tooling.
pub const CODE_LENGTHS: [usize; 4] = [8, 16, 32, 64];

/// `{1e-4, 1e-3, ..., 1e2}`, the regularization grid used for both `alpha` and `beta`.
pub const REGULARIZATION_GRID: [f64; 7] = [1e-4, 1e-3, 1e-2, 1e-1, 1e0, 1e1, 1e2];

/// Learner for the real-valued FM baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FmSolver {
    /// Exact per-parameter minimization (monotone).
    CoordinateDescent,
    /// Plain per-instance SGD with a fixed learning rate.
    Sgd { learning_rate: f64 },
}

/// Hyperparameters shared by FM and DFM training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// l2 strength on the linear weights.
    pub alpha: f64,
    /// Strength of the delegate trace coupling.
    pub beta: f64,
    /// Code length / embedding dimension.
    pub k: usize,
    pub max_outer_iters: usize,
    /// Relative objective change that ends training.
    pub tol: f64,
    pub seed: u64,
    /// Half-width of the uniform embedding initializer.
    pub init_scale: f64,
    /// l2 on the real embeddings; only used by the FM baseline.
    pub embed_l2: f64,
    pub solver: FmSolver,
    /// Alternation rounds of the relaxed warm start.
    pub init_rounds: usize,
    /// FM sweeps over the embeddings inside each warm-start round.
    pub init_fm_sweeps: usize,
    /// Sweep cap and step tolerance for the ridge solve of the linear part.
    pub w_max_sweeps: usize,
    pub w_tol: f64,
    /// Visit bits in a seeded random order instead of ascending.
    pub shuffle_sweep: bool,
    /// Recompute cached predictions from scratch every this many sweeps.
    pub audit_interval: usize,
}

impl TrainConfig {
    /// Defaults for discrete training.
    pub fn dfm() -> Self {
        TrainConfig {
            alpha: 1e-2,
            beta: 1e-2,
            k: 16,
            max_outer_iters: 50,
            tol: 1e-6,
            seed: 0,
            init_scale: 0.01,
            embed_l2: 0.0,
            solver: FmSolver::CoordinateDescent,
            init_rounds: 3,
            init_fm_sweeps: 5,
            w_max_sweeps: 500,
            w_tol: 1e-10,
            shuffle_sweep: false,
            audit_interval: 10,
        }
    }

    /// Defaults for the real-valued baseline.
    pub fn fm() -> Self {
        TrainConfig { beta: 0.0, embed_l2: 0.1, ..Self::dfm() }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_embed_l2(mut self, embed_l2: f64) -> Self {
        self.embed_l2 = embed_l2;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("embed_l2", self.embed_l2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0")));
            }
        }
        if !(self.tol >= 0.0) || !(self.w_tol >= 0.0) {
            return Err(Error::InvalidArgument("tolerances must be >= 0".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidArgument("init_scale must be finite and >= 0".into()));
        }
        if let FmSolver::Sgd { learning_rate } = self.solver {
            if !(learning_rate > 0.0 && learning_rate.is_finite()) {
                return Err(Error::InvalidArgument("learning rate must be positive".into()));
            }
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::dfm()
    }
}

/// `|prev - cur| / max(|prev|, tiny)`.
pub(crate) fn relative_change(prev: f64, cur: f64) -> f64 {
    let denom = libm::fabs(prev).max(1e-300);
    libm::fabs(prev - cur) / denom
}
