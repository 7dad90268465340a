//! Real-valued factorization machine.
//!
//! The model is `w0 + sum_i w_i x_i + sum_{i<j} <v_i, v_j> x_i x_j`, with
//! the pairwise term evaluated in `O(k * nnz)` through
//! `1/2 * sum_t [(sum_i x_i v_ti)^2 - sum_i x_i^2 v_ti^2]`.
//!
//! Training is coordinate descent: every parameter enters the prediction
//! linearly, so each update is the exact one-dimensional minimizer of the
//! regularized squared loss and the objective never increases. The same
//! machinery, extended with the delegate coupling `beta ||V||^2 -
//! 2 beta tr(V^T D)`, drives the relaxed warm start of the discrete learner.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{relative_change, FmSolver, TrainConfig};
use crate::data::{Dataset, FeatureIndex, SparseVector};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::Predictor;

/// Real FM parameters. Embeddings are stored feature-major: the `k`
/// values of feature `i` are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct FmModel {
    w0: f64,
    w: Vec<f64>,
    v: Vec<f64>,
    k: usize,
}

impl FmModel {
    pub fn zeros(n: usize, k: usize) -> Self {
        FmModel { w0: 0.0, w: vec![0.0; n], v: vec![0.0; n * k], k }
    }

    /// `v` is feature-major (`n * k`, feature `i` at `v[i*k..(i+1)*k]`).
    pub fn from_parts(w0: f64, w: Vec<f64>, v: Vec<f64>, k: usize) -> Result<Self> {
        if k == 0 || v.len() != w.len() * k {
            return Err(Error::Dimension(alloc::format!(
                "embedding has {} entries, expected {} x {k}",
                v.len(),
                w.len()
            )));
        }
        if !w0.is_finite() || w.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("FM parameters must be finite".into()));
        }
        Ok(FmModel { w0, w, v, k })
    }

    /// Builds from the `k x n` orientation (row `t` holds bit/dimension `t`).
    pub fn from_rows(w0: f64, w: Vec<f64>, rows: &DenseMatrix) -> Result<Self> {
        if rows.cols() != w.len() {
            return Err(Error::Dimension("embedding columns differ from n".into()));
        }
        let (k, n) = (rows.rows(), rows.cols());
        let mut v = vec![0.0; n * k];
        for t in 0..k {
            for i in 0..n {
                v[i * k + t] = rows[(t, i)];
            }
        }
        Self::from_parts(w0, w, v, k)
    }

    /// Uniform `[-scale, scale]` embeddings, zero bias and weights.
    pub fn random(n: usize, k: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let v = (0..n * k)
            .map(|_| if scale > 0.0 { rng.random_range(-scale..=scale) } else { 0.0 })
            .collect();
        FmModel { w0: 0.0, w: vec![0.0; n], v, k }
    }

    pub fn n_features(&self) -> usize {
        self.w.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn w0(&self) -> f64 {
        self.w0
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.v[i * self.k..(i + 1) * self.k]
    }

    /// Feature-major embedding storage.
    pub fn embeddings(&self) -> &[f64] {
        &self.v
    }

    /// `V` as a `k x n` matrix.
    pub fn embedding_rows(&self) -> DenseMatrix {
        let n = self.n_features();
        let mut m = DenseMatrix::zeros(self.k, n);
        for i in 0..n {
            for t in 0..self.k {
                m[(t, i)] = self.v[i * self.k + t];
            }
        }
        m
    }

    pub(crate) fn set_linear(&mut self, w0: f64, w: Vec<f64>) {
        self.w0 = w0;
        self.w = w;
    }

    /// Prediction through the `O(k * nnz)` identity.
    pub fn predict(&self, x: &SparseVector) -> Result<f64> {
        x.check_bounds(self.n_features())?;
        let mut y = self.w0;
        for (i, xi) in x.iter() {
            y += self.w[i] * xi;
        }
        Ok(y + self.pairwise(x))
    }

    fn pairwise(&self, x: &SparseVector) -> f64 {
        let k = self.k;
        let mut total = 0.0;
        for t in 0..k {
            let (mut s, mut s2) = (0.0, 0.0);
            for (i, xi) in x.iter() {
                let p = xi * self.v[i * k + t];
                s += p;
                s2 += p * p;
            }
            total += s * s - s2;
        }
        0.5 * total
    }
}

impl Predictor for FmModel {
    fn n_features(&self) -> usize {
        self.w.len()
    }

    fn predict(&self, x: &SparseVector) -> Result<f64> {
        FmModel::predict(self, x)
    }
}

/// Sum of squared residuals plus `alpha ||w||^2`.
pub fn fm_objective(m: &FmModel, d: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    let mut sse = 0.0;
    for inst in d.instances() {
        let r = inst.target - m.predict(&inst.features)?;
        sse += r * r;
    }
    Ok(sse + cfg.alpha * m.w.iter().map(|w| w * w).sum::<f64>())
}

/// Sweep cap and step tolerance for the ridge solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeOptions {
    pub max_sweeps: usize,
    /// Stop once no coordinate moved by more than `tol * (1 + max |w|)`
    /// during a sweep.
    pub tol: f64,
}

impl Default for RidgeOptions {
    fn default() -> Self {
        RidgeOptions { max_sweeps: 500, tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution {
    pub w0: f64,
    pub w: Vec<f64>,
    pub objective: f64,
    /// Objective before the first sweep and after each sweep.
    pub trace: Vec<f64>,
}

/// Ridge fit of `phi ~ w0 + w.x` from a zero start. `w0` is not penalized.
///
/// With `alpha = 0` and collinear features the minimizer is not unique;
/// coordinate descent still converges to one of them.
pub fn solve_w(phi: &[f64], d: &Dataset, alpha: f64) -> Result<RidgeSolution> {
    let index = FeatureIndex::build(d);
    let zeros = vec![0.0; d.n_features()];
    solve_w_warm(phi, d, &index, alpha, 0.0, &zeros, RidgeOptions::default())
}

/// Coordinate-descent ridge solve started at `(w0, w)`. Every coordinate
/// step is the exact one-dimensional minimizer, so the objective is
/// non-increasing.
pub fn solve_w_warm(
    phi: &[f64],
    d: &Dataset,
    index: &FeatureIndex,
    alpha: f64,
    w0: f64,
    w: &[f64],
    opts: RidgeOptions,
) -> Result<RidgeSolution> {
    if phi.len() != d.len() || w.len() != d.n_features() || index.n_features() != d.n_features() {
        return Err(Error::Dimension("ridge solve inputs disagree with the dataset".into()));
    }
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument("alpha must be >= 0".into()));
    }
    if phi.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidArgument("residual targets must be finite".into()));
    }
    let (mut w0, mut w) = (w0, w.to_vec());
    let mut resid: Vec<f64> = phi.to_vec();
    for (e, inst) in resid.iter_mut().zip(d.instances()) {
        *e -= w0 + inst.features.iter().map(|(i, x)| w[i] * x).sum::<f64>();
    }
    let objective = |resid: &[f64], w: &[f64]| {
        resid.iter().map(|e| e * e).sum::<f64>() + alpha * w.iter().map(|x| x * x).sum::<f64>()
    };
    let mut obj = objective(&resid, &w);
    let mut trace = vec![obj];
    let count = d.len() as f64;

    for _ in 0..opts.max_sweeps {
        let mut step = 0.0f64;
        if !resid.is_empty() {
            let shift = resid.iter().sum::<f64>() / count;
            w0 += shift;
            resid.iter_mut().for_each(|e| *e -= shift);
            step = libm::fabs(shift);
        }
        for (j, wj) in w.iter_mut().enumerate() {
            let bucket = index.bucket(j);
            let (mut xx, mut xe) = (0.0, 0.0);
            for &(id, x) in bucket {
                xx += x * x;
                xe += x * resid[id];
            }
            let denom = xx + alpha;
            let new = if denom > 0.0 { (xe + *wj * xx) / denom } else { 0.0 };
            let delta = new - *wj;
            step = step.max(libm::fabs(delta));
            if delta != 0.0 {
                for &(id, x) in bucket {
                    resid[id] -= delta * x;
                }
                *wj = new;
            }
        }
        let next = objective(&resid, &w);
        if !next.is_finite() {
            return Err(Error::NonFinite { iteration: trace.len(), stage: "ridge" });
        }
        trace.push(next);
        let size = w.iter().fold(libm::fabs(w0), |m, v| m.max(libm::fabs(*v)));
        let done = next == 0.0 || step <= opts.tol * (1.0 + size);
        obj = next;
        if done {
            break;
        }
    }
    Ok(RidgeSolution { w0, w, objective: obj, trace })
}

/// Coordinate-descent state: residuals `y - yhat` and per-instance
/// factor sums `q_it = sum_j x_j v_jt`.
pub(crate) struct FmFit<'a> {
    data: &'a Dataset,
    index: &'a FeatureIndex,
    pub(crate) model: FmModel,
    resid: Vec<f64>,
    q: Vec<f64>,
}

impl<'a> FmFit<'a> {
    pub(crate) fn new(data: &'a Dataset, index: &'a FeatureIndex, model: FmModel) -> Self {
        let mut fit = FmFit { data, index, model, resid: Vec::new(), q: Vec::new() };
        fit.refresh();
        fit
    }

    pub(crate) fn refresh(&mut self) {
        let k = self.model.k;
        self.resid = Vec::with_capacity(self.data.len());
        self.q = vec![0.0; self.data.len() * k];
        for (id, inst) in self.data.instances().iter().enumerate() {
            let q = &mut self.q[id * k..(id + 1) * k];
            let mut y = self.model.w0;
            let mut sq = 0.0;
            for (i, x) in inst.features.iter() {
                y += self.model.w[i] * x;
                for (t, qt) in q.iter_mut().enumerate() {
                    let p = x * self.model.v[i * k + t];
                    *qt += p;
                    sq += p * p;
                }
            }
            y += 0.5 * (q.iter().map(|s| s * s).sum::<f64>() - sq);
            self.resid.push(inst.target - y);
        }
    }

    /// Squared loss plus `alpha ||w||^2 + (embed_l2 + beta) ||V||^2 -
    /// 2 beta tr(V^T D)` (the coupling only when `delegate` is given).
    pub(crate) fn objective(&self, cfg: &TrainConfig, delegate: Option<&DenseMatrix>) -> f64 {
        let m = &self.model;
        let mut obj = self.resid.iter().map(|e| e * e).sum::<f64>()
            + cfg.alpha * m.w.iter().map(|w| w * w).sum::<f64>()
            + cfg.embed_l2 * m.v.iter().map(|v| v * v).sum::<f64>();
        if let Some(d) = delegate {
            let n = m.n_features();
            let mut trace = 0.0;
            for i in 0..n {
                for t in 0..m.k {
                    trace += m.v[i * m.k + t] * d[(t, i)];
                }
            }
            obj += cfg.beta * (m.v.iter().map(|v| v * v).sum::<f64>() - 2.0 * trace);
        }
        obj
    }

    pub(crate) fn sweep_linear(&mut self, cfg: &TrainConfig) {
        if !self.resid.is_empty() {
            let shift = self.resid.iter().sum::<f64>() / self.resid.len() as f64;
            self.model.w0 += shift;
            self.resid.iter_mut().for_each(|e| *e -= shift);
        }
        for j in 0..self.model.n_features() {
            let bucket = self.index.bucket(j);
            let (mut xx, mut xe) = (0.0, 0.0);
            for &(id, x) in bucket {
                xx += x * x;
                xe += x * self.resid[id];
            }
            let old = self.model.w[j];
            let denom = xx + cfg.alpha;
            let new = if denom > 0.0 { (xe + old * xx) / denom } else { old };
            let delta = new - old;
            if delta != 0.0 {
                for &(id, x) in bucket {
                    self.resid[id] -= delta * x;
                }
                self.model.w[j] = new;
            }
        }
    }

    /// One pass over every embedding entry, dimension-major.
    pub(crate) fn sweep_embeddings(&mut self, cfg: &TrainConfig, delegate: Option<&DenseMatrix>) {
        let k = self.model.k;
        let beta = if delegate.is_some() { cfg.beta } else { 0.0 };
        let reg = cfg.embed_l2 + beta;
        for t in 0..k {
            for j in 0..self.model.n_features() {
                let bucket = self.index.bucket(j);
                if bucket.is_empty() && reg == 0.0 {
                    continue;
                }
                let old = self.model.v[j * k + t];
                let (mut hh, mut he) = (0.0, 0.0);
                for &(id, x) in bucket {
                    let h = x * (self.q[id * k + t] - old * x);
                    hh += h * h;
                    he += h * self.resid[id];
                }
                let pull = delegate.map_or(0.0, |d| beta * d[(t, j)]);
                let denom = hh + reg;
                if denom <= 0.0 {
                    continue;
                }
                let new = (he + old * hh + pull) / denom;
                let delta = new - old;
                if delta != 0.0 {
                    for &(id, x) in bucket {
                        let h = x * (self.q[id * k + t] - old * x);
                        self.resid[id] -= delta * h;
                        self.q[id * k + t] += delta * x;
                    }
                    self.model.v[j * k + t] = new;
                }
            }
        }
    }

    /// Residual targets with the linear part removed: `y - pairwise(x)`.
    pub(crate) fn pairwise_residual(&self) -> Vec<f64> {
        self.data
            .instances()
            .iter()
            .zip(&self.resid)
            .map(|(inst, e)| {
                // y - pair = (y - yhat) + linear part
                e + self.model.w0
                    + inst.features.iter().map(|(i, x)| self.model.w[i] * x).sum::<f64>()
            })
            .collect()
    }
}

/// Trains the real-valued baseline.
pub fn fm_train(d: &Dataset, cfg: &TrainConfig) -> Result<FmModel> {
    fm_train_with(d, cfg, |_, _| {})
}

/// Trains the baseline, reporting `(iteration, objective)` after each outer
/// iteration.
pub fn fm_train_with(
    d: &Dataset,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<FmModel> {
    cfg.validate()?;
    if d.is_empty() {
        return Err(Error::EmptyData);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = FmModel::random(d.n_features(), cfg.k, cfg.init_scale, &mut rng);
    match cfg.solver {
        FmSolver::CoordinateDescent => {
            let index = FeatureIndex::build(d);
            let mut fit = FmFit::new(d, &index, model);
            let mut obj = fit.objective(cfg, None);
            for iter in 1..=cfg.max_outer_iters {
                fit.sweep_linear(cfg);
                fit.sweep_embeddings(cfg, None);
                let next = fit.objective(cfg, None);
                if !next.is_finite() {
                    return Err(Error::NonFinite { iteration: iter, stage: "fm" });
                }
                progress(iter, next);
                let done = next == 0.0 || relative_change(obj, next) < cfg.tol;
                obj = next;
                if done {
                    break;
                }
            }
            Ok(fit.model)
        }
        FmSolver::Sgd { learning_rate } => sgd_train(d, cfg, model, learning_rate, &mut rng, progress),
    }
}

fn sgd_train(
    d: &Dataset,
    cfg: &TrainConfig,
    mut m: FmModel,
    lr: f64,
    rng: &mut ChaCha8Rng,
    mut progress: impl FnMut(usize, f64),
) -> Result<FmModel> {
    let k = m.k;
    let mut order: Vec<usize> = (0..d.len()).collect();
    let mut q = vec![0.0; k];
    let mut prev = f64::INFINITY;
    for iter in 1..=cfg.max_outer_iters {
        order.shuffle(rng);
        for &id in &order {
            let inst = &d.instances()[id];
            let err = m.predict(&inst.features)? - inst.target;
            q.iter_mut().for_each(|s| *s = 0.0);
            for (i, x) in inst.features.iter() {
                for t in 0..k {
                    q[t] += x * m.v[i * k + t];
                }
            }
            m.w0 -= lr * err;
            for (i, x) in inst.features.iter() {
                m.w[i] -= lr * (err * x + cfg.alpha * m.w[i]);
                for t in 0..k {
                    let vit = m.v[i * k + t];
                    let g = err * x * (q[t] - vit * x) + cfg.embed_l2 * vit;
                    m.v[i * k + t] = vit - lr * g;
                }
            }
        }
        let obj = fm_objective(&m, d, cfg)?
            + cfg.embed_l2 * m.v.iter().map(|v| v * v).sum::<f64>();
        if !obj.is_finite() {
            return Err(Error::NonFinite { iteration: iter, stage: "fm-sgd" });
        }
        progress(iter, obj);
        if relative_change(prev, obj) < cfg.tol {
            break;
        }
        prev = obj;
    }
    Ok(m)
}
