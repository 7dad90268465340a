//! Discrete training by alternating minimization.
//!
//! The softened objective is
//!
//! ```text
//! sum (y - yhat)^2 + alpha ||w||^2 - 2 beta tr(B^T D)
//! ```
//!
//! with `B` in `{+1,-1}^{k x n}` and the delegate `D` constrained to
//! `D 1 = 0`, `D D^T = n I`. Each outer iteration updates `B` bit by bit
//! (discrete coordinate descent), then `D` in closed form, then the bias and
//! linear weights by a ridge solve. All three steps are descent steps.
//!
//! The optimizer keeps, per instance, the bit sums `s_t = sum_i x_i b_it`
//! and the current prediction, so a bit flip is patched in `O(|V_r|)`.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codes::{CodeMatrix, DfmModel};
use crate::config::{relative_change, TrainConfig};
use crate::data::{Dataset, FeatureIndex};
use crate::error::{Error, Result};
use crate::fm::{solve_w_warm, FmFit, FmModel, RidgeOptions};
use crate::linalg::{complete_orthonormal, orthonormalize_against, symmetric_eigen, DenseMatrix};

/// `+1` for `x >= 0`, `-1` otherwise.
pub fn sgn(x: f64) -> Result<i8> {
    if x.is_nan() {
        return Err(Error::NanInput);
    }
    Ok(if x >= 0.0 { 1 } else { -1 })
}

/// Real `k x n` matrix with zero row sums and `D D^T = n I`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelegateMatrix {
    m: DenseMatrix,
}

impl DelegateMatrix {
    /// Wraps a `k x n` matrix without checking the constraints.
    pub fn from_matrix(m: DenseMatrix) -> Self {
        DelegateMatrix { m }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.m
    }

    pub fn k(&self) -> usize {
        self.m.rows()
    }

    pub fn n(&self) -> usize {
        self.m.cols()
    }

    /// `d_rt`: bit `t` of feature `r`.
    #[inline]
    pub fn get(&self, r: usize, t: usize) -> f64 {
        self.m[(t, r)]
    }

    /// `||D 1||_inf`.
    pub fn balance_error(&self) -> f64 {
        (0..self.k())
            .map(|t| libm::fabs(self.m.row(t).iter().sum::<f64>()))
            .fold(0.0, f64::max)
    }

    /// `||D D^T - n I||_max`.
    pub fn decorrelation_error(&self) -> f64 {
        let g = self.m.gram();
        let n = self.n() as f64;
        let mut worst = 0.0f64;
        for i in 0..self.k() {
            for j in 0..self.k() {
                let want = if i == j { n } else { 0.0 };
                worst = worst.max(libm::fabs(g[(i, j)] - want));
            }
        }
        worst
    }
}

/// `B` as a `k x n` real matrix.
pub fn codes_to_matrix(b: &CodeMatrix) -> DenseMatrix {
    let (k, n) = (b.k(), b.n());
    let signs = b.unpack();
    DenseMatrix::from_vec(k, n, signs.into_iter().map(f64::from).collect()).expect("shape")
}

/// Closed-form `argmax_D tr(B^T D)` subject to `D 1 = 0`, `D D^T = n I`,
/// for any real `k x n` source (codes or relaxed embeddings).
///
/// Center rows, eigendecompose the `k x k` Gram matrix, lift the
/// eigenvectors with nonzero eigenvalue to right singular vectors, complete
/// the remaining directions by Gram-Schmidt against `[Q 1]`, and return
/// `sqrt(n) [P P^] [Q Q^]^T`.
pub fn update_delegate<R: rand::Rng + ?Sized>(source: &DenseMatrix, rng: &mut R) -> Result<DelegateMatrix> {
    let (k, n) = (source.rows(), source.cols());
    if n == 0 || k > n - 1 {
        return Err(Error::InsufficientFeatures { k, n });
    }
    let mut centered = source.clone();
    for t in 0..k {
        let row = centered.row_mut(t);
        let mean = row.iter().sum::<f64>() / n as f64;
        row.iter_mut().for_each(|v| *v -= mean);
    }
    let eig = symmetric_eigen(&centered.gram())?;
    let largest = eig.values.first().copied().unwrap_or(0.0).max(0.0);
    let rank_tol = k.max(n) as f64 * f64::EPSILON * largest;

    let ones = vec![1.0 / libm::sqrt(n as f64); n];
    let mut basis: Vec<Vec<f64>> = vec![ones];
    let mut p_kept: Vec<Vec<f64>> = Vec::new();
    let mut p_null: Vec<Vec<f64>> = Vec::new();
    for (j, &lambda) in eig.values.iter().enumerate() {
        let p: Vec<f64> = (0..k).map(|r| eig.vectors[(r, j)]).collect();
        if lambda > rank_tol {
            let sigma = libm::sqrt(lambda);
            let q: Vec<f64> = (0..n)
                .map(|i| (0..k).map(|t| centered[(t, i)] * p[t]).sum::<f64>() / sigma)
                .collect();
            // cleanup pass keeps [Q 1] orthonormal at working precision
            if let Some(q) = orthonormalize_against(&q, &basis) {
                basis.push(q);
                p_kept.push(p);
                continue;
            }
        }
        p_null.push(p);
    }
    let q_hat = complete_orthonormal(&basis, n, p_null.len(), rng)?;

    let scale = libm::sqrt(n as f64);
    let mut d = DenseMatrix::zeros(k, n);
    let lefts = p_kept.iter().chain(&p_null);
    let rights = basis[1..].iter().chain(&q_hat);
    for (p, q) in lefts.zip(rights) {
        for t in 0..k {
            let pt = p[t] * scale;
            if pt != 0.0 {
                for (dst, &qi) in d.row_mut(t).iter_mut().zip(q) {
                    *dst += pt * qi;
                }
            }
        }
    }
    Ok(DelegateMatrix { m: d })
}

/// `tr(B^T D) = sum_{r,t} b_rt d_rt`.
pub fn code_trace(b: &CodeMatrix, d: &DelegateMatrix) -> f64 {
    let mut tr = 0.0;
    for r in 0..b.n() {
        for t in 0..b.k() {
            tr += f64::from(b.sign(r, t)) * d.get(r, t);
        }
    }
    tr
}

/// Outcome of one bit update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitUpdate {
    pub feature: usize,
    pub bit: usize,
    /// The update statistic; `sgn` of it is the new bit unless it is zero.
    pub b_hat: f64,
    pub old: i8,
    pub new: i8,
}

/// Softened-objective values around one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterRecord {
    pub iteration: usize,
    pub start: f64,
    pub after_b: f64,
    pub after_d: f64,
    pub after_w: f64,
    pub flips: usize,
}

/// Full optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    n: usize,
    k: usize,
    /// Feature-major signs, `signs[r * k + t] = b_rt`.
    signs: Vec<i8>,
    delegate: DelegateMatrix,
    w0: f64,
    w: Vec<f64>,
    /// Per-instance bit sums, `s[id * k + t]`.
    s: Vec<f64>,
    /// Per-instance `sum_i x_i^2`.
    sq: Vec<f64>,
    pred: Vec<f64>,
    objective_trace: Vec<f64>,
    history: Vec<OuterRecord>,
    iteration: usize,
    sweeps: usize,
}

impl OptState {
    /// Builds a state and fills its caches from scratch.
    pub fn new(
        data: &Dataset,
        codes: &CodeMatrix,
        delegate: DelegateMatrix,
        w0: f64,
        w: Vec<f64>,
    ) -> Result<Self> {
        let (n, k) = (codes.n(), codes.k());
        if data.n_features() != n || w.len() != n || delegate.k() != k || delegate.n() != n {
            return Err(Error::Dimension("optimizer state parts disagree".into()));
        }
        let mut signs = vec![0i8; n * k];
        for r in 0..n {
            for t in 0..k {
                signs[r * k + t] = codes.sign(r, t);
            }
        }
        let mut st = OptState {
            n,
            k,
            signs,
            delegate,
            w0,
            w,
            s: Vec::new(),
            sq: Vec::new(),
            pred: Vec::new(),
            objective_trace: Vec::new(),
            history: Vec::new(),
            iteration: 0,
            sweeps: 0,
        };
        st.refresh_caches(data);
        Ok(st)
    }

    /// Restores a checkpointed state.
    pub fn restore(
        data: &Dataset,
        model: &DfmModel,
        delegate: DelegateMatrix,
        objective_trace: Vec<f64>,
        iteration: usize,
    ) -> Result<Self> {
        let mut st = Self::new(data, model.codes(), delegate, model.w0(), model.w().to_vec())?;
        st.objective_trace = objective_trace;
        st.iteration = iteration;
        st.sweeps = iteration;
        Ok(st)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn sign(&self, r: usize, t: usize) -> i8 {
        self.signs[r * self.k + t]
    }

    /// Overwrites one bit and patches the caches.
    pub fn set_sign(&mut self, index: &FeatureIndex, r: usize, t: usize, b: i8) {
        let old = self.sign(r, t);
        if old != b {
            self.flip(index, r, t, old, b);
        }
    }

    pub fn codes(&self) -> CodeMatrix {
        CodeMatrix::pack_feature_major(&self.signs, self.n, self.k).expect("signs are +-1")
    }

    pub fn delegate(&self) -> &DelegateMatrix {
        &self.delegate
    }

    pub fn w0(&self) -> f64 {
        self.w0
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn cached_predictions(&self) -> &[f64] {
        &self.pred
    }

    /// Objective after initialization and after every outer iteration.
    pub fn objective_trace(&self) -> &[f64] {
        &self.objective_trace
    }

    pub fn history(&self) -> &[OuterRecord] {
        &self.history
    }

    /// Completed outer iterations.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn to_model(&self) -> DfmModel {
        DfmModel::new(self.w0, self.w.clone(), self.codes()).expect("consistent state")
    }

    fn fresh_caches(&self, data: &Dataset) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let k = self.k;
        let mut s = vec![0.0; data.len() * k];
        let mut sq = Vec::with_capacity(data.len());
        let mut pred = Vec::with_capacity(data.len());
        for (id, inst) in data.instances().iter().enumerate() {
            let acc = &mut s[id * k..(id + 1) * k];
            let mut lin = self.w0;
            let mut xx = 0.0;
            for (i, x) in inst.features.iter() {
                lin += self.w[i] * x;
                xx += x * x;
                for (t, a) in acc.iter_mut().enumerate() {
                    *a += x * f64::from(self.signs[i * k + t]);
                }
            }
            let pair = 0.5 * (acc.iter().map(|v| v * v).sum::<f64>() - k as f64 * xx);
            sq.push(xx);
            pred.push(lin + pair);
        }
        (s, sq, pred)
    }

    pub fn refresh_caches(&mut self, data: &Dataset) {
        let (s, sq, pred) = self.fresh_caches(data);
        self.s = s;
        self.sq = sq;
        self.pred = pred;
    }

    /// Recomputes the caches, fails if any prediction drifted by more than
    /// `1e-6`, and adopts the fresh values. Returns the largest drift.
    pub fn audit(&mut self, data: &Dataset) -> Result<f64> {
        let (s, sq, pred) = self.fresh_caches(data);
        let mut worst = (0usize, 0.0f64);
        for (id, (a, b)) in self.pred.iter().zip(&pred).enumerate() {
            let drift = libm::fabs(a - b);
            if drift > worst.1 {
                worst = (id, drift);
            }
        }
        if worst.1 > 1e-6 {
            return Err(Error::CacheInconsistent { instance: worst.0, drift: worst.1 });
        }
        self.s = s;
        self.sq = sq;
        self.pred = pred;
        Ok(worst.1)
    }

    /// `sum (y - yhat)^2 + alpha ||w||^2 - 2 beta tr(B^T D)` from the caches.
    pub fn soft_objective(&self, data: &Dataset, cfg: &TrainConfig) -> f64 {
        let sse: f64 = data.targets().zip(&self.pred).map(|(y, p)| (y - p) * (y - p)).sum();
        let reg: f64 = self.w.iter().map(|w| w * w).sum();
        let mut trace = 0.0;
        for r in 0..self.n {
            for t in 0..self.k {
                trace += f64::from(self.signs[r * self.k + t]) * self.delegate.get(r, t);
            }
        }
        sse + cfg.alpha * reg - 2.0 * cfg.beta * trace
    }

    /// `b_hat_rt = sum_{V_r} x_r rho (s_t - x_r b_rt) + beta d_rt`, where
    /// `rho` is the residual with the `(r, t)` interaction removed.
    pub fn bit_statistic(&self, data: &Dataset, index: &FeatureIndex, cfg: &TrainConfig, r: usize, t: usize) -> f64 {
        let k = self.k;
        let b = f64::from(self.sign(r, t));
        let mut acc = 0.0;
        for &(id, x) in index.bucket(r) {
            let rest = self.s[id * k + t] - x * b;
            let h = x * rest;
            let rho = data.instances()[id].target - self.pred[id] + h * b;
            acc += h * rho;
        }
        acc + cfg.beta * self.delegate.get(r, t)
    }

    /// DCD step on one bit: `b_rt <- sgn(b_hat)` unless `b_hat == 0`.
    pub fn update_bit(
        &mut self,
        data: &Dataset,
        index: &FeatureIndex,
        cfg: &TrainConfig,
        r: usize,
        t: usize,
    ) -> Result<BitUpdate> {
        let b_hat = self.bit_statistic(data, index, cfg, r, t);
        let old = self.sign(r, t);
        let new = if b_hat == 0.0 { old } else { sgn(b_hat)? };
        if new != old {
            self.flip(index, r, t, old, new);
        }
        Ok(BitUpdate { feature: r, bit: t, b_hat, old, new })
    }

    fn flip(&mut self, index: &FeatureIndex, r: usize, t: usize, old: i8, new: i8) {
        let k = self.k;
        let bn = f64::from(new);
        let bo = f64::from(old);
        for &(id, x) in index.bucket(r) {
            let st = &mut self.s[id * k + t];
            let rest = *st - x * bo;
            self.pred[id] += x * rest * (bn - bo);
            *st = rest + x * bn;
        }
        self.signs[r * k + t] = new;
    }

    /// One full DCD sweep over all `(feature, bit)` pairs. Returns the
    /// number of flipped bits.
    pub fn update_b(&mut self, data: &Dataset, index: &FeatureIndex, cfg: &TrainConfig) -> Result<usize> {
        let mut order: Vec<(usize, usize)> =
            (0..self.n).flat_map(|r| (0..self.k).map(move |t| (r, t))).collect();
        if cfg.shuffle_sweep {
            let mut rng = stream_rng(cfg.seed, 0x5eed_0000 + self.sweeps as u64);
            order.shuffle(&mut rng);
        }
        let mut flips = 0;
        for (r, t) in order {
            let u = self.update_bit(data, index, cfg, r, t)?;
            flips += usize::from(u.new != u.old);
        }
        self.sweeps += 1;
        if cfg.audit_interval > 0 && self.sweeps % cfg.audit_interval == 0 {
            self.audit(data)?;
        }
        Ok(flips)
    }

    /// Closed-form delegate for the current codes.
    pub fn update_d<R: rand::Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let mut m = DenseMatrix::zeros(self.k, self.n);
        for r in 0..self.n {
            for t in 0..self.k {
                m[(t, r)] = f64::from(self.signs[r * self.k + t]);
            }
        }
        self.delegate = update_delegate(&m, rng)?;
        Ok(())
    }

    /// Ridge solve of the bias and linear weights on `phi = y - pairwise`,
    /// warm-started at the current weights.
    pub fn update_w(&mut self, data: &Dataset, index: &FeatureIndex, cfg: &TrainConfig) -> Result<()> {
        let k = self.k as f64;
        let pair: Vec<f64> = (0..data.len())
            .map(|id| {
                let s = &self.s[id * self.k..(id + 1) * self.k];
                0.5 * (s.iter().map(|v| v * v).sum::<f64>() - k * self.sq[id])
            })
            .collect();
        let phi: Vec<f64> = data.targets().zip(&pair).map(|(y, p)| y - p).collect();
        let opts = RidgeOptions { max_sweeps: cfg.w_max_sweeps, tol: cfg.w_tol };
        let sol = solve_w_warm(&phi, data, index, cfg.alpha, self.w0, &self.w, opts)?;
        self.w0 = sol.w0;
        self.w = sol.w;
        for ((p, inst), pr) in self.pred.iter_mut().zip(data.instances()).zip(pair) {
            *p = self.w0 + inst.features.iter().map(|(i, x)| self.w[i] * x).sum::<f64>() + pr;
        }
        Ok(())
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Relaxed warm start: alternate FM sweeps on real embeddings (with the
/// `beta ||V||^2 - 2 beta tr(V^T D)` coupling), the closed-form delegate of
/// `V`, and a ridge solve of the linear part; then round `B = sgn(V)`.
pub fn initialize(data: &Dataset, cfg: &TrainConfig) -> Result<OptState> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let (n, k) = (data.n_features(), cfg.k);
    if n == 0 || k > n - 1 {
        return Err(Error::InsufficientFeatures { k, n });
    }
    let index = FeatureIndex::build(data);
    let mut rng = stream_rng(cfg.seed, 1);
    let v = FmModel::random(n, k, cfg.init_scale, &mut rng);
    let mut delegate = update_delegate(&v.embedding_rows(), &mut rng)?;
    let mut fit = FmFit::new(data, &index, v);
    let opts = RidgeOptions { max_sweeps: cfg.w_max_sweeps, tol: cfg.w_tol };

    let zeros = vec![0.0; n];
    let sol = solve_w_warm(&fit.pairwise_residual(), data, &index, cfg.alpha, 0.0, &zeros, opts)?;
    fit.model.set_linear(sol.w0, sol.w);
    fit.refresh();

    for round in 0..cfg.init_rounds {
        for _ in 0..cfg.init_fm_sweeps {
            fit.sweep_embeddings(cfg, Some(delegate.matrix()));
        }
        if !fit.objective(cfg, Some(delegate.matrix())).is_finite() {
            return Err(Error::NonFinite { iteration: round, stage: "init" });
        }
        delegate = update_delegate(&fit.model.embedding_rows(), &mut rng)?;
        let m = &fit.model;
        let sol = solve_w_warm(&fit.pairwise_residual(), data, &index, cfg.alpha, m.w0(), m.w(), opts)?;
        fit.model.set_linear(sol.w0, sol.w);
        fit.refresh();
    }

    let signs = fit
        .model
        .embeddings()
        .iter()
        .map(|&v| sgn(v))
        .collect::<Result<Vec<i8>>>()?;
    let codes = CodeMatrix::pack_feature_major(&signs, n, k)?;
    let mut st = OptState::new(data, &codes, delegate, fit.model.w0(), fit.model.w().to_vec())?;
    let obj = st.soft_objective(data, cfg);
    if !obj.is_finite() {
        return Err(Error::NonFinite { iteration: 0, stage: "init" });
    }
    st.objective_trace.push(obj);
    Ok(st)
}

/// Training progress event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub iteration: usize,
    pub objective: f64,
    pub flips: usize,
}

/// Trains a DFM with default progress handling.
pub fn train_dfm(data: &Dataset, cfg: &TrainConfig) -> Result<DfmModel> {
    let st = train_dfm_with(data, cfg, |_| {})?;
    Ok(st.to_model())
}

/// Initializes, then runs the alternation. Returns the final state.
pub fn train_dfm_with(data: &Dataset, cfg: &TrainConfig, progress: impl FnMut(Progress)) -> Result<OptState> {
    let st = initialize(data, cfg)?;
    resume_dfm(data, cfg, st, progress)
}

/// Continues the alternation from `st` until the relative change of the
/// objective over an outer iteration drops below `cfg.tol` or
/// `cfg.max_outer_iters` iterations have been completed in total.
pub fn resume_dfm(
    data: &Dataset,
    cfg: &TrainConfig,
    mut st: OptState,
    mut progress: impl FnMut(Progress),
) -> Result<OptState> {
    cfg.validate()?;
    if st.k != cfg.k || st.n != data.n_features() {
        return Err(Error::Dimension("checkpoint does not match the configuration".into()));
    }
    let index = FeatureIndex::build(data);
    let mut obj = st.soft_objective(data, cfg);
    if st.objective_trace.is_empty() {
        st.objective_trace.push(obj);
    }
    let check = |v: f64, iteration: usize, stage: &'static str| {
        if v.is_finite() { Ok(v) } else { Err(Error::NonFinite { iteration, stage }) }
    };
    while st.iteration < cfg.max_outer_iters {
        let iteration = st.iteration + 1;
        let start = obj;
        let flips = st.update_b(data, &index, cfg)?;
        let after_b = check(st.soft_objective(data, cfg), iteration, "update_b")?;
        st.update_d(&mut stream_rng(cfg.seed, 2 + iteration as u64))?;
        let after_d = check(st.soft_objective(data, cfg), iteration, "update_d")?;
        st.update_w(data, &index, cfg)?;
        // fresh caches at every boundary keep checkpoints resumable bit for bit
        st.refresh_caches(data);
        let after_w = check(st.soft_objective(data, cfg), iteration, "update_w")?;
        st.history.push(OuterRecord { iteration, start, after_b, after_d, after_w, flips });
        st.objective_trace.push(after_w);
        st.iteration = iteration;
        progress(Progress { iteration, objective: after_w, flips });
        obj = after_w;
        if relative_change(start, after_w) < cfg.tol {
            break;
        }
    }
    Ok(st)
}
