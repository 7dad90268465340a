//! Sparse rating instances, datasets with optional one-hot user/item
//! fields, per-feature inverted indices and the per-user train/test split.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A sparse feature vector: strictly increasing ids with nonzero finite values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseVector {
    /// Validates an already sorted representation.
    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::LengthMismatch { indices: indices.len(), values: values.len() });
        }
        for (pos, w) in indices.windows(2).enumerate() {
            if w[0] == w[1] {
                return Err(Error::DuplicateIndex { index: w[0] });
            }
            if w[0] > w[1] {
                return Err(Error::UnsortedIndices { position: pos + 1 });
            }
        }
        for (&i, &v) in indices.iter().zip(&values) {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { index: i });
            }
            if v == 0.0 {
                return Err(Error::ZeroValue { index: i });
            }
        }
        Ok(SparseVector { indices, values })
    }

    /// Builds from `(index, value)` pairs in any order. Duplicate ids are
    /// rejected, explicit zeros are dropped.
    pub fn from_pairs(mut pairs: Vec<(usize, f64)>) -> Result<Self> {
        for &(i, v) in &pairs {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { index: i });
            }
        }
        pairs.sort_by_key(|p| p.0);
        if let Some(w) = pairs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateIndex { index: w[0].0 });
        }
        let (indices, values) = pairs.into_iter().filter(|p| p.1 != 0.0).unzip();
        Ok(SparseVector { indices, values })
    }

    /// All listed features with value 1.
    pub fn one_hot(indices: &[usize]) -> Result<Self> {
        Self::from_pairs(indices.iter().map(|&i| (i, 1.0)).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn max_index(&self) -> Option<usize> {
        self.indices.last().copied()
    }

    pub fn get(&self, index: usize) -> Option<f64> {
        self.indices.binary_search(&index).ok().map(|p| self.values[p])
    }

    /// Union of two vectors with disjoint supports.
    pub fn merge(&self, other: &SparseVector) -> Result<SparseVector> {
        let mut pairs: Vec<(usize, f64)> = self.iter().chain(other.iter()).collect();
        pairs.sort_by_key(|p| p.0);
        if let Some(w) = pairs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::ContextOverlap { index: w[0].0 });
        }
        let (indices, values) = pairs.into_iter().unzip();
        Ok(SparseVector { indices, values })
    }

    pub(crate) fn check_bounds(&self, n_features: usize) -> Result<()> {
        match self.max_index() {
            Some(index) if index >= n_features => Err(Error::IndexOutOfRange { index, n_features }),
            _ => Ok(()),
        }
    }
}

/// One training or testing pair `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseInstance {
    pub features: SparseVector,
    pub target: f64,
}

impl SparseInstance {
    pub fn new(features: SparseVector, target: f64) -> Result<Self> {
        if !target.is_finite() {
            return Err(Error::InvalidArgument("target must be finite".into()));
        }
        Ok(SparseInstance { features, target })
    }
}

/// Contiguous block `[offset, offset + width)` of one-hot encoded ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldRange {
    pub offset: usize,
    pub width: usize,
}

impl FieldRange {
    pub fn new(offset: usize, width: usize) -> Self {
        FieldRange { offset, width }
    }

    pub fn end(&self) -> usize {
        self.offset + self.width
    }

    pub fn contains(&self, index: usize) -> bool {
        index >= self.offset && index < self.end()
    }

    /// The single feature id of `x` inside this field, if there is exactly one.
    pub fn locate(&self, x: &SparseVector) -> Option<usize> {
        let mut it = x.indices().iter().copied().filter(|&i| self.contains(i));
        let first = it.next()?;
        match it.next() {
            None => Some(first),
            Some(_) => None,
        }
    }

    fn count(&self, x: &SparseVector) -> usize {
        x.indices().iter().filter(|&&i| self.contains(i)).count()
    }
}

/// A validated collection of instances over a fixed feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    instances: Vec<SparseInstance>,
    n_features: usize,
    user_field: Option<FieldRange>,
    item_field: Option<FieldRange>,
}

impl Dataset {
    pub fn new(
        instances: Vec<SparseInstance>,
        n_features: usize,
        user_field: Option<FieldRange>,
        item_field: Option<FieldRange>,
    ) -> Result<Self> {
        for (field, name) in [(user_field, "user"), (item_field, "item")] {
            if let Some(f) = field {
                if f.end() > n_features {
                    return Err(Error::FieldOutOfRange { field: name });
                }
            }
        }
        for (id, inst) in instances.iter().enumerate() {
            inst.features.check_bounds(n_features)?;
            for (field, name) in [(user_field, "user"), (item_field, "item")] {
                if let Some(f) = field {
                    let found = f.count(&inst.features);
                    if found != 1 {
                        return Err(Error::FieldViolation { instance: id, field: name, found });
                    }
                }
            }
        }
        Ok(Dataset { instances, n_features, user_field, item_field })
    }

    /// Dimension inferred as `1 + max index` (0 when empty).
    pub fn infer(instances: Vec<SparseInstance>) -> Result<Self> {
        let n = instances
            .iter()
            .filter_map(|i| i.features.max_index())
            .max()
            .map_or(0, |m| m + 1);
        Self::new(instances, n, None, None)
    }

    pub fn empty(n_features: usize) -> Self {
        Dataset { instances: Vec::new(), n_features, user_field: None, item_field: None }
    }

    pub fn instances(&self) -> &[SparseInstance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn user_field(&self) -> Option<FieldRange> {
        self.user_field
    }

    pub fn item_field(&self) -> Option<FieldRange> {
        self.item_field
    }

    pub fn nnz(&self) -> usize {
        self.instances.iter().map(|i| i.features.nnz()).sum()
    }

    pub fn targets(&self) -> impl Iterator<Item = f64> + '_ {
        self.instances.iter().map(|i| i.target)
    }

    /// User feature id of instance `id` (requires a user field).
    pub fn user_of(&self, id: usize) -> Option<usize> {
        self.user_field?.locate(&self.instances[id].features)
    }

    pub fn item_of(&self, id: usize) -> Option<usize> {
        self.item_field?.locate(&self.instances[id].features)
    }

    /// Same fields and dimension, different instances.
    pub fn with_instances(&self, instances: Vec<SparseInstance>) -> Result<Self> {
        Self::new(instances, self.n_features, self.user_field, self.item_field)
    }

    /// Collapses repeated `(user, item)` ratings into one instance carrying
    /// the mean target and the features of the first occurrence. A no-op
    /// unless both fields are declared.
    pub fn average_duplicate_ratings(self) -> Self {
        let (Some(uf), Some(itf)) = (self.user_field, self.item_field) else {
            return self;
        };
        let mut slot: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut sums: Vec<(f64, usize)> = Vec::new();
        let mut kept: Vec<SparseInstance> = Vec::new();
        for inst in self.instances {
            // validated at construction
            let key = (uf.locate(&inst.features).unwrap(), itf.locate(&inst.features).unwrap());
            match slot.get(&key) {
                Some(&s) => {
                    sums[s].0 += inst.target;
                    sums[s].1 += 1;
                }
                None => {
                    slot.insert(key, kept.len());
                    sums.push((inst.target, 1));
                    kept.push(inst);
                }
            }
        }
        for (inst, (sum, count)) in kept.iter_mut().zip(sums) {
            if count > 1 {
                inst.target = sum / count as f64;
            }
        }
        Dataset { instances: kept, ..self }
    }
}

/// Inverted index: for every feature `r`, the instances with `x_r != 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureIndex {
    offsets: Vec<usize>,
    entries: Vec<(usize, f64)>,
}

impl FeatureIndex {
    pub fn build(d: &Dataset) -> Self {
        let n = d.n_features();
        let mut counts = alloc::vec![0usize; n + 1];
        for inst in d.instances() {
            for &i in inst.features.indices() {
                counts[i + 1] += 1;
            }
        }
        for r in 0..n {
            counts[r + 1] += counts[r];
        }
        let offsets = counts.clone();
        let mut cursor = counts;
        let mut entries = alloc::vec![(0usize, 0.0f64); d.nnz()];
        for (id, inst) in d.instances().iter().enumerate() {
            for (i, v) in inst.features.iter() {
                entries[cursor[i]] = (id, v);
                cursor[i] += 1;
            }
        }
        FeatureIndex { offsets, entries }
    }

    /// `(instance id, x_r)` pairs in ascending instance order.
    pub fn bucket(&self, r: usize) -> &[(usize, f64)] {
        &self.entries[self.offsets[r]..self.offsets[r + 1]]
    }

    pub fn n_features(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total_entries(&self) -> usize {
        self.entries.len()
    }
}

/// A user whose ratings could not be split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitWarning {
    pub user: usize,
    pub ratings: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    pub warnings: Vec<SplitWarning>,
}

/// Per user, `ceil(train_fraction * m)` randomly chosen ratings go to the
/// training side and the rest to the test side. Instance order is preserved
/// within each side.
pub fn split_per_user(d: &Dataset, train_fraction: f64, seed: u64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument("train fraction must lie in (0, 1)".into()));
    }
    let uf = d.user_field().ok_or(Error::MissingField { field: "user" })?;
    let mut by_user: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (id, inst) in d.instances().iter().enumerate() {
        let user = uf.locate(&inst.features).ok_or(Error::FieldViolation {
            instance: id,
            field: "user",
            found: 0,
        })?;
        by_user.entry(user).or_default().push(id);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut to_train = alloc::vec![false; d.len()];
    let mut warnings = Vec::new();
    for (&user, ids) in by_user.iter_mut() {
        let m = ids.len();
        if m < 2 {
            warnings.push(SplitWarning { user, ratings: m });
        }
        // guard against 0.7 * 10 = 7.000000000000001
        let take = libm::ceil(train_fraction * m as f64 - 1e-9) as usize;
        ids.shuffle(&mut rng);
        for &id in &ids[..take.clamp(1, m)] {
            to_train[id] = true;
        }
    }

    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (inst, t) in d.instances().iter().zip(to_train) {
        if t { train.push(inst.clone()) } else { test.push(inst.clone()) }
    }
    Ok(Split { train: d.with_instances(train)?, test: d.with_instances(test)?, warnings })
}
