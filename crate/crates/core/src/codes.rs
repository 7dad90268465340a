//! Bit-packed `{+1, -1}` codes and the discrete FM predictor.
//!
//! Bit value 1 encodes +1 and 0 encodes -1. Each feature owns a block of
//! `ceil(k / 64)` consecutive words; bit `t` lives in word `t / 64` at
//! position `t % 64`. Unused high bits of a block's last word are zero.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::SparseVector;
use crate::error::{Error, Result};
use crate::Predictor;

pub const WORD_BITS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CodeMatrix {
    n: usize,
    k: usize,
    words_per_feature: usize,
    words: Vec<u64>,
}

fn block_words(k: usize) -> usize {
    k.div_ceil(WORD_BITS)
}

fn tail_mask(k: usize) -> u64 {
    match k % WORD_BITS {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

impl CodeMatrix {
    /// All bits -1.
    pub fn negative(n: usize, k: usize) -> Self {
        let wpf = block_words(k);
        CodeMatrix { n, k, words_per_feature: wpf, words: vec![0; n * wpf] }
    }

    /// Packs a `k x n` sign matrix given row-major (`signs[t * n + i]`).
    pub fn pack(signs: &[i8], k: usize, n: usize) -> Result<Self> {
        Self::pack_with(signs, k, n, |t, i| t * n + i)
    }

    /// Packs signs stored feature-major (`signs[i * k + t]`).
    pub fn pack_feature_major(signs: &[i8], n: usize, k: usize) -> Result<Self> {
        Self::pack_with(signs, k, n, |t, i| i * k + t)
    }

    fn pack_with(signs: &[i8], k: usize, n: usize, at: impl Fn(usize, usize) -> usize) -> Result<Self> {
        if k == 0 || signs.len() != k * n {
            return Err(Error::Dimension(alloc::format!(
                "{} signs for k = {k}, n = {n}",
                signs.len()
            )));
        }
        let mut c = Self::negative(n, k);
        for i in 0..n {
            for t in 0..k {
                let pos = at(t, i);
                match signs[pos] {
                    1 => c.words[i * c.words_per_feature + t / WORD_BITS] |= 1 << (t % WORD_BITS),
                    -1 => {}
                    _ => return Err(Error::NotSign { position: pos }),
                }
            }
        }
        Ok(c)
    }

    /// Adopts raw words laid out as described in the module docs.
    pub fn from_words(n: usize, k: usize, words: Vec<u64>) -> Result<Self> {
        let wpf = block_words(k);
        if k == 0 || words.len() != n * wpf {
            return Err(Error::Dimension(alloc::format!(
                "{} words for k = {k}, n = {n}",
                words.len()
            )));
        }
        let mask = tail_mask(k);
        if (0..n).any(|i| words[(i + 1) * wpf - 1] & !mask != 0) {
            return Err(Error::InvalidArgument("padding bits must be zero".into()));
        }
        Ok(CodeMatrix { n, k, words_per_feature: wpf, words })
    }

    /// `k x n` row-major signs.
    pub fn unpack(&self) -> Vec<i8> {
        let mut out = vec![0i8; self.k * self.n];
        for i in 0..self.n {
            for t in 0..self.k {
                out[t * self.n + i] = self.sign(i, t);
            }
        }
        out
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn words_per_feature(&self) -> usize {
        self.words_per_feature
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Storage in 64-bit words: `n * ceil(k / 64)`.
    pub fn memory_words(&self) -> usize {
        self.words.len()
    }

    #[inline]
    pub fn block(&self, i: usize) -> &[u64] {
        &self.words[i * self.words_per_feature..(i + 1) * self.words_per_feature]
    }

    #[inline]
    pub fn sign(&self, i: usize, t: usize) -> i8 {
        if self.bit(i, t) { 1 } else { -1 }
    }

    #[inline]
    fn bit(&self, i: usize, t: usize) -> bool {
        (self.words[i * self.words_per_feature + t / WORD_BITS] >> (t % WORD_BITS)) & 1 == 1
    }

    pub fn set_sign(&mut self, i: usize, t: usize, sign: i8) {
        let w = &mut self.words[i * self.words_per_feature + t / WORD_BITS];
        let m = 1u64 << (t % WORD_BITS);
        if sign > 0 { *w |= m } else { *w &= !m }
    }

    /// `<b_i, b_j> = k - 2 * popcount(b_i XOR b_j)`.
    pub fn code_dot(&self, i: usize, j: usize) -> Result<i64> {
        for idx in [i, j] {
            if idx >= self.n {
                return Err(Error::IndexOutOfRange { index: idx, n_features: self.n });
            }
        }
        Ok(self.dot_unchecked(i, j))
    }

    #[inline]
    fn dot_unchecked(&self, i: usize, j: usize) -> i64 {
        let diff: u32 = self
            .block(i)
            .iter()
            .zip(self.block(j))
            .map(|(a, b)| (a ^ b).count_ones())
            .sum();
        self.k as i64 - 2 * diff as i64
    }
}

/// How `dfm_predict` evaluates the pairwise term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScorePath {
    /// Pairwise when `nnz * words_per_feature < 2k`, accumulation otherwise.
    #[default]
    Auto,
    /// Per-bit sums `s_t = sum_i x_i b_it`, then `1/2 (sum_t s_t^2 - k sum_i x_i^2)`.
    Accumulate,
    /// XOR/popcount over every pair of active features.
    Pairwise,
}

/// Discrete FM: real bias and linear weights, binary codes.
#[derive(Debug, Clone, PartialEq)]
pub struct DfmModel {
    w0: f64,
    w: Vec<f64>,
    codes: CodeMatrix,
}

impl DfmModel {
    pub fn new(w0: f64, w: Vec<f64>, codes: CodeMatrix) -> Result<Self> {
        if w.len() != codes.n() {
            return Err(Error::Dimension(alloc::format!(
                "{} linear weights for {} coded features",
                w.len(),
                codes.n()
            )));
        }
        if !w0.is_finite() || w.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("DFM weights must be finite".into()));
        }
        Ok(DfmModel { w0, w, codes })
    }

    pub fn w0(&self) -> f64 {
        self.w0
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn codes(&self) -> &CodeMatrix {
        &self.codes
    }

    pub fn k(&self) -> usize {
        self.codes.k()
    }

    pub fn n_features(&self) -> usize {
        self.w.len()
    }

    pub fn predict(&self, x: &SparseVector) -> Result<f64> {
        self.predict_with(x, ScorePath::Auto)
    }

    pub fn predict_with(&self, x: &SparseVector, path: ScorePath) -> Result<f64> {
        x.check_bounds(self.n_features())?;
        let linear: f64 = self.w0 + x.iter().map(|(i, v)| self.w[i] * v).sum::<f64>();
        let path = match path {
            ScorePath::Auto if x.nnz() * self.codes.words_per_feature < 2 * self.k() => {
                ScorePath::Pairwise
            }
            ScorePath::Auto => ScorePath::Accumulate,
            p => p,
        };
        let pair = match path {
            ScorePath::Pairwise => self.pairwise_popcount(x),
            _ => self.pairwise_accumulate(x),
        };
        Ok(linear + pair)
    }

    fn pairwise_popcount(&self, x: &SparseVector) -> f64 {
        if self.codes.words_per_feature == 1 {
            return self.pairwise_popcount_single(x);
        }
        let (idx, val) = (x.indices(), x.values());
        let mut total = 0.0;
        for a in 0..idx.len() {
            let mut row = 0.0;
            for b in a + 1..idx.len() {
                row += self.codes.dot_unchecked(idx[a], idx[b]) as f64 * val[b];
            }
            total += row * val[a];
        }
        total
    }

    /// `k <= 64`: `sum_{a<b} x_a x_b (k - 2 popcount(b_a ^ b_b))`, with the
    /// `k` part taken from `(sum x)^2 - sum x^2`.
    fn pairwise_popcount_single(&self, x: &SparseVector) -> f64 {
        let (idx, val) = (x.indices(), x.values());
        let mut stack = [0u64; 64];
        let mut heap = Vec::new();
        let words: &mut [u64] = if idx.len() <= stack.len() {
            &mut stack[..idx.len()]
        } else {
            heap.resize(idx.len(), 0);
            &mut heap
        };
        let all = self.codes.words();
        for (w, &i) in words.iter_mut().zip(idx) {
            *w = all[i];
        }
        let mut mismatch = 0.0;
        for a in 0..words.len() {
            let wa = words[a];
            let (mut even, mut odd) = (0.0, 0.0);
            let rest = &words[a + 1..];
            let vals = &val[a + 1..];
            let mut pairs = rest.chunks_exact(2).zip(vals.chunks_exact(2));
            for (w, v) in &mut pairs {
                even += f64::from((wa ^ w[0]).count_ones()) * v[0];
                odd += f64::from((wa ^ w[1]).count_ones()) * v[1];
            }
            if rest.len() % 2 == 1 {
                even += f64::from((wa ^ rest[rest.len() - 1]).count_ones()) * vals[vals.len() - 1];
            }
            mismatch += (even + odd) * val[a];
        }
        let sum: f64 = val.iter().sum();
        let sq: f64 = val.iter().map(|v| v * v).sum();
        0.5 * self.k() as f64 * (sum * sum - sq) - 2.0 * mismatch
    }

    fn pairwise_accumulate(&self, x: &SparseVector) -> f64 {
        let k = self.k();
        let mut sum_sq = 0.0;
        for c in 0..self.codes.words_per_feature {
            let bits = (k - c * WORD_BITS).min(WORD_BITS);
            let mut s = [0.0f64; WORD_BITS];
            for (i, v) in x.iter() {
                accumulate_word(&mut s[..bits], self.codes.block(i)[c], v);
            }
            sum_sq += s[..bits].iter().map(|v| v * v).sum::<f64>();
        }
        let xx: f64 = x.values().iter().map(|v| v * v).sum();
        0.5 * (sum_sq - k as f64 * xx)
    }

    /// Scores `context ∪ item` for each candidate. The context's per-bit
    /// sums are computed once.
    pub fn score_items(&self, context: &SparseVector, candidates: &[SparseVector]) -> Result<Vec<f64>> {
        context.check_bounds(self.n_features())?;
        let k = self.k();
        let wpf = self.codes.words_per_feature;
        let mut base = vec![0.0; wpf * WORD_BITS];
        for (i, v) in context.iter() {
            for c in 0..wpf {
                let bits = (k - c * WORD_BITS).min(WORD_BITS);
                accumulate_word(&mut base[c * WORD_BITS..c * WORD_BITS + bits], self.codes.block(i)[c], v);
            }
        }
        let ctx_lin: f64 = self.w0 + context.iter().map(|(i, v)| self.w[i] * v).sum::<f64>();
        let ctx_sq: f64 = context.values().iter().map(|v| v * v).sum();

        let mut s = vec![0.0; base.len()];
        let mut out = Vec::with_capacity(candidates.len());
        for cand in candidates {
            cand.check_bounds(self.n_features())?;
            if let Some(&index) = cand.indices().iter().find(|i| context.indices().binary_search(i).is_ok()) {
                return Err(Error::ContextOverlap { index });
            }
            s.copy_from_slice(&base);
            let mut lin = ctx_lin;
            let mut sq = ctx_sq;
            for (i, v) in cand.iter() {
                lin += self.w[i] * v;
                sq += v * v;
                for c in 0..wpf {
                    let bits = (k - c * WORD_BITS).min(WORD_BITS);
                    accumulate_word(&mut s[c * WORD_BITS..c * WORD_BITS + bits], self.codes.block(i)[c], v);
                }
            }
            let sum_sq: f64 = s.iter().map(|v| v * v).sum();
            out.push(lin + 0.5 * (sum_sq - k as f64 * sq));
        }
        Ok(out)
    }

    /// [`score_items`](Self::score_items) for one-hot items with value 1.
    pub fn score_item_ids(&self, context: &SparseVector, items: &[usize]) -> Result<Vec<f64>> {
        let cands = items
            .iter()
            .map(|&i| SparseVector::one_hot(&[i]))
            .collect::<Result<Vec<_>>>()?;
        self.score_items(context, &cands)
    }
}

#[inline]
fn accumulate_word(s: &mut [f64], word: u64, v: f64) {
    for (b, acc) in s.iter_mut().enumerate() {
        *acc += if (word >> b) & 1 == 1 { v } else { -v };
    }
}

impl Predictor for DfmModel {
    fn n_features(&self) -> usize {
        self.w.len()
    }

    fn predict(&self, x: &SparseVector) -> Result<f64> {
        DfmModel::predict(self, x)
    }
}
