//! NDCG@K over per-user rankings.
//!
//! Gain is `2^rel - 1`, the discount at rank `p` (1-based) is
//! `1 / log2(p + 1)`. Items are ranked by predicted score descending with
//! ties broken by ascending item id. A user whose ideal DCG is zero scores
//! 1.0.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::Predictor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedItem {
    pub item: usize,
    pub score: f64,
    pub rating: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserRanking {
    pub user: usize,
    pub items: Vec<RankedItem>,
}

/// Test items of every user with predicted scores and true ratings.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingRun {
    users: Vec<UserRanking>,
    k_max: usize,
}

impl RankingRun {
    pub fn new(users: Vec<UserRanking>, k_max: usize) -> Result<Self> {
        for u in &users {
            if u.items.is_empty() {
                return Err(Error::InvalidArgument(alloc::format!("user {} has no items", u.user)));
            }
            if u.items.iter().any(|i| !i.rating.is_finite()) {
                return Err(Error::InvalidArgument(alloc::format!(
                    "user {} has a non-finite rating",
                    u.user
                )));
            }
        }
        Ok(RankingRun { users, k_max })
    }

    /// Scores every instance of `test` with `model`, grouped by user.
    pub fn from_predictions<P: Predictor + ?Sized>(model: &P, test: &Dataset, k_max: usize) -> Result<Self> {
        let uf = test.user_field().ok_or(Error::MissingField { field: "user" })?;
        let itf = test.item_field().ok_or(Error::MissingField { field: "item" })?;
        let mut by_user: BTreeMap<usize, Vec<RankedItem>> = BTreeMap::new();
        for (id, inst) in test.instances().iter().enumerate() {
            let missing = |field| Error::FieldViolation { instance: id, field, found: 0 };
            let user = uf.locate(&inst.features).ok_or_else(|| missing("user"))?;
            let item = itf.locate(&inst.features).ok_or_else(|| missing("item"))?;
            let score = model.predict(&inst.features)?;
            by_user.entry(user).or_default().push(RankedItem { item, score, rating: inst.target });
        }
        let users = by_user.into_iter().map(|(user, items)| UserRanking { user, items }).collect();
        Self::new(users, k_max)
    }

    pub fn users(&self) -> &[UserRanking] {
        &self.users
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NdcgReport {
    pub k: usize,
    /// `(user, ndcg)` in run order.
    pub per_user: Vec<(usize, f64)>,
    /// Mean over users; 0 for an empty run.
    pub mean: f64,
}

fn gain(rating: f64) -> f64 {
    libm::exp2(rating) - 1.0
}

fn discount(rank: usize) -> f64 {
    1.0 / libm::log2(rank as f64 + 1.0)
}

/// NDCG@K of a single user's list.
pub fn ndcg_user(items: &[RankedItem], k: usize) -> f64 {
    let mut ranked: Vec<&RankedItem> = items.iter().collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.item.cmp(&b.item)));
    let dcg: f64 = ranked.iter().take(k).enumerate().map(|(p, it)| gain(it.rating) * discount(p + 1)).sum();

    let mut ideal: Vec<f64> = items.iter().map(|i| i.rating).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(p, &r)| gain(r) * discount(p + 1)).sum();
    if idcg == 0.0 { 1.0 } else { dcg / idcg }
}

pub fn ndcg_at_k(run: &RankingRun, k: usize) -> Result<NdcgReport> {
    if k < 1 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if k > run.k_max {
        return Err(Error::InvalidArgument(alloc::format!("K = {k} exceeds K_max = {}", run.k_max)));
    }
    let per_user: Vec<(usize, f64)> = run.users.iter().map(|u| (u.user, ndcg_user(&u.items, k))).collect();
    let mean = if per_user.is_empty() {
        0.0
    } else {
        per_user.iter().map(|p| p.1).sum::<f64>() / per_user.len() as f64
    };
    Ok(NdcgReport { k, per_user, mean })
}
