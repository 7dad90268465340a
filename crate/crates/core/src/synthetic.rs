//! Seeded synthetic data: planted DFM/FM generators for accuracy checks and
//! random models plus instances for timing.
//!
//! Planted datasets lay features out as `[users | items | words]`. Every item
//! owns a fixed set of `words_per_item` content words, and a rating carries
//! the user id, the item id and the item's words, all at `feature_value`.

use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::codes::{CodeMatrix, DfmModel};
use crate::data::{Dataset, FieldRange, SparseInstance, SparseVector};
use crate::error::{Error, Result};
use crate::fm::FmModel;
use crate::Predictor;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub users: usize,
    pub items: usize,
    /// Vocabulary size of the item content.
    pub words: usize,
    pub words_per_item: usize,
    pub k: usize,
    pub instances: usize,
    pub noise_sigma: f64,
    /// Value of every active feature.
    pub feature_value: f64,
    pub w0: f64,
    /// Half-width of the uniform linear weights.
    pub linear_scale: f64,
    pub seed: u64,
}

impl PlantedSpec {
    /// 50 features (10 users, 25 items, 15 words, 3 per item), k = 8,
    /// 2000 ratings, noise 0.1.
    pub fn desk() -> Self {
        PlantedSpec {
            users: 10,
            items: 25,
            words: 15,
            words_per_item: 3,
            k: 8,
            instances: 2000,
            noise_sigma: 0.1,
            feature_value: 0.35,
            w0: 3.0,
            linear_scale: 0.3,
            seed: 17,
        }
    }

    pub fn n_features(&self) -> usize {
        self.users + self.items + self.words
    }

    fn layout(&self) -> (FieldRange, FieldRange) {
        (FieldRange::new(0, self.users), FieldRange::new(self.users, self.items))
    }

    fn validate(&self) -> Result<()> {
        if self.users == 0 || self.items == 0 || self.k == 0 {
            return Err(Error::InvalidArgument("planted data needs users, items and k > 0".into()));
        }
        if self.words_per_item > self.words {
            return Err(Error::InvalidArgument("more words per item than the vocabulary holds".into()));
        }
        if !(self.noise_sigma >= 0.0) || self.feature_value == 0.0 {
            return Err(Error::InvalidArgument("invalid noise or feature value".into()));
        }
        Ok(())
    }
}

/// A generated dataset together with the model that produced it.
#[derive(Debug, Clone)]
pub struct Planted<M> {
    pub dataset: Dataset,
    pub truth: M,
}

fn item_words<R: Rng>(spec: &PlantedSpec, rng: &mut R) -> Vec<Vec<usize>> {
    (0..spec.items)
        .map(|_| {
            let base = spec.users + spec.items;
            sample(rng, spec.words, spec.words_per_item).into_iter().map(|w| base + w).collect()
        })
        .collect()
}

fn sample_features<R: Rng>(spec: &PlantedSpec, words: &[Vec<usize>], rng: &mut R) -> SparseVector {
    let user = rng.random_range(0..spec.users);
    let item = rng.random_range(0..spec.items);
    let mut pairs = Vec::with_capacity(2 + spec.words_per_item);
    pairs.push((user, spec.feature_value));
    pairs.push((spec.users + item, spec.feature_value));
    pairs.extend(words[item].iter().map(|&w| (w, spec.feature_value)));
    SparseVector::from_pairs(pairs).expect("distinct ids")
}

fn generate<M: Predictor, R: Rng>(spec: &PlantedSpec, truth: M, rng: &mut R) -> Result<Planted<M>> {
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0))
        .map_err(|_| Error::InvalidArgument("bad noise level".into()))?;
    let words = item_words(spec, rng);
    let mut instances = Vec::with_capacity(spec.instances);
    for _ in 0..spec.instances {
        let x = sample_features(spec, &words, rng);
        let y = truth.predict(&x)? + if spec.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
        instances.push(SparseInstance::new(x, y)?);
    }
    let (uf, itf) = spec.layout();
    let dataset = Dataset::new(instances, spec.n_features(), Some(uf), Some(itf))?;
    Ok(Planted { dataset, truth })
}

fn linear_weights<R: Rng>(spec: &PlantedSpec, rng: &mut R) -> Vec<f64> {
    (0..spec.n_features())
        .map(|_| if spec.linear_scale > 0.0 { rng.random_range(-spec.linear_scale..spec.linear_scale) } else { 0.0 })
        .collect()
}

/// Targets from a random `{+1,-1}` code matrix plus Gaussian noise.
pub fn planted_dfm(spec: &PlantedSpec) -> Result<Planted<DfmModel>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_features();
    let codes = random_codes(n, spec.k, &mut rng);
    let w = linear_weights(spec, &mut rng);
    let truth = DfmModel::new(spec.w0, w, codes)?;
    generate(spec, truth, &mut rng)
}

/// Targets from a random real FM with `N(0, embed_sigma^2)` embeddings.
pub fn planted_fm(spec: &PlantedSpec, embed_sigma: f64) -> Result<Planted<FmModel>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_features();
    let normal = Normal::new(0.0, embed_sigma).map_err(|_| Error::InvalidArgument("bad sigma".into()))?;
    let v: Vec<f64> = (0..n * spec.k).map(|_| normal.sample(&mut rng)).collect();
    let w = linear_weights(spec, &mut rng);
    let truth = FmModel::from_parts(spec.w0, w, v, spec.k)?;
    generate(spec, truth, &mut rng)
}

pub fn random_codes<R: Rng>(n: usize, k: usize, rng: &mut R) -> CodeMatrix {
    let signs: Vec<i8> = (0..n * k).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect();
    CodeMatrix::pack_feature_major(&signs, n, k).expect("valid signs")
}

/// Random real and binary models over the same feature space.
pub fn random_model_pair<R: Rng>(n: usize, k: usize, rng: &mut R) -> (FmModel, DfmModel) {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v: Vec<f64> = (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let fm = FmModel::from_parts(0.5, w.clone(), v, k).expect("finite");
    let dfm = DfmModel::new(0.5, w, random_codes(n, k, rng)).expect("finite");
    (fm, dfm)
}

/// `count` instances, each with `nnz` distinct features valued in `(0, 1]`.
pub fn random_instances<R: Rng>(n: usize, nnz: usize, count: usize, rng: &mut R) -> Result<Dataset> {
    if nnz > n {
        return Err(Error::InvalidArgument("nnz exceeds the feature dimension".into()));
    }
    let instances = (0..count)
        .map(|_| {
            let pairs = sample(rng, n, nnz)
                .into_iter()
                .map(|i| (i, 1.0 - rng.random::<f64>()))
                .collect();
            let target = rng.random_range(1.0..5.0);
            SparseInstance::new(SparseVector::from_pairs(pairs).expect("distinct"), target)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(instances, n, None, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_is_deterministic_and_fielded() {
        let spec = PlantedSpec { instances: 100, ..PlantedSpec::desk() };
        let a = planted_dfm(&spec).unwrap();
        let b = planted_dfm(&spec).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.dataset.n_features(), 50);
        assert!(a.dataset.user_field().is_some());
        assert!(a.dataset.instances().iter().all(|i| i.features.nnz() == 5));
        // an item always carries the same words
        let itf = a.dataset.item_field().unwrap();
        let mut seen = alloc::collections::BTreeMap::new();
        for inst in a.dataset.instances() {
            let item = itf.locate(&inst.features).unwrap();
            let words: Vec<usize> = inst.features.indices().iter().copied().filter(|&i| i >= 35).collect();
            assert_eq!(seen.entry(item).or_insert_with(|| words.clone()), &words);
        }
    }

    #[test]
    fn random_instances_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = random_instances(100, 30, 10, &mut rng).unwrap();
        assert_eq!(d.nnz(), 300);
        assert!(random_instances(10, 11, 1, &mut rng).is_err());
    }
}
