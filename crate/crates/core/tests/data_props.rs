use std::collections::BTreeMap;

use dfm_core::{split_per_user, Dataset, FeatureIndex, FieldRange, SparseInstance, SparseVector};
use proptest::prelude::*;

fn dataset() -> impl Strategy<Value = Dataset> {
    let users = 6usize;
    let items = 8usize;
    proptest::collection::vec((0..users, 0..items, 0usize..4, 1u8..=5), 1..60).prop_map(move |rows| {
        let instances = rows
            .into_iter()
            .map(|(u, i, extra, y)| {
                let mut pairs = vec![(u, 1.0), (users + i, 1.0)];
                if extra > 0 {
                    pairs.push((users + items + extra - 1, 0.5 * extra as f64));
                }
                SparseInstance::new(SparseVector::from_pairs(pairs).unwrap(), f64::from(y)).unwrap()
            })
            .collect();
        Dataset::new(
            instances,
            users + items + 3,
            Some(FieldRange::new(0, users)),
            Some(FieldRange::new(users, items)),
        )
        .unwrap()
    })
}

fn per_user_counts(d: &Dataset) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for id in 0..d.len() {
        *m.entry(d.user_of(id).unwrap()).or_insert(0) += 1;
    }
    m
}

proptest! {
    #[test]
    fn split_partitions_every_user(d in dataset(), seed in any::<u64>(), frac in 0.05f64..0.95) {
        let s = split_per_user(&d, frac, seed).unwrap();
        prop_assert_eq!(s.train.len() + s.test.len(), d.len());
        let (all, train) = (per_user_counts(&d), per_user_counts(&s.train));
        let test = per_user_counts(&s.test);
        for (user, &m) in &all {
            let t = train.get(user).copied().unwrap_or(0);
            prop_assert_eq!(t + test.get(user).copied().unwrap_or(0), m);
            let want = ((frac * m as f64) - 1e-9).ceil().clamp(1.0, m as f64) as usize;
            prop_assert_eq!(t, want);
        }
        // every original instance lands on exactly one side, in order
        let mut merged: Vec<&SparseInstance> = s.train.instances().iter().chain(s.test.instances()).collect();
        let mut orig: Vec<&SparseInstance> = d.instances().iter().collect();
        let key = |i: &&SparseInstance| (i.features.indices().to_vec(), i.target.to_bits());
        merged.sort_by_key(key);
        orig.sort_by_key(key);
        prop_assert_eq!(merged, orig);
        prop_assert_eq!(s.warnings.is_empty(), all.values().all(|&m| m >= 2));
    }

    #[test]
    fn feature_index_lists_every_entry_once(d in dataset()) {
        let index = FeatureIndex::build(&d);
        prop_assert_eq!(index.total_entries(), d.nnz());
        for r in 0..d.n_features() {
            let bucket = index.bucket(r);
            prop_assert!(bucket.windows(2).all(|w| w[0].0 < w[1].0));
            for &(id, x) in bucket {
                prop_assert_eq!(d.instances()[id].features.get(r), Some(x));
            }
        }
    }
}
