//! Seeded synthetic datasets for demos, fixtures and benchmarks.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{AnalysisStore, InstanceRecord, LatentSpace, Manifest, Split};
use crate::error::Result;

/// A manifest plus one embedding space.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub manifest: Manifest,
    pub space: LatentSpace,
}

impl SyntheticDataset {
    pub fn store(&self) -> Result<AnalysisStore> {
        AnalysisStore::new(self.manifest.instances.clone(), vec![self.space.clone()])
    }

    /// Value of a binary attribute for every instance, in manifest order.
    pub fn attribute(&self, name: &str) -> Vec<bool> {
        self.manifest
            .instances
            .iter()
            .map(|r| r.attributes.as_ref().and_then(|a| a.get(name)) == Some(&1))
            .collect()
    }
}

fn record(i: usize, split: Split, attributes: BTreeMap<String, u8>) -> InstanceRecord {
    let id = format!("{}{:05}", split.as_str(), i);
    InstanceRecord {
        image_path: format!("images/{id}.png"),
        id,
        split,
        attributes: Some(attributes),
    }
}

/// Train: `n_train` draws of N(0, I) in 2D. Test: `n_inlier` draws of N(0, I)
/// followed by `n_shifted` draws of N(offset, I). Attribute `shifted` marks
/// the second group.
pub fn gaussian_shift(
    n_train: usize,
    n_inlier: usize,
    n_shifted: usize,
    offset: [f32; 2],
    seed: u64,
) -> SyntheticDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut data = Vec::new();
    let groups = [
        (Split::Train, n_train, [0.0, 0.0], 0u8),
        (Split::Test, n_inlier, [0.0, 0.0], 0),
        (Split::Test, n_shifted, offset, 1),
    ];
    for (split, n, mean, flag) in groups {
        for _ in 0..n {
            let i = records.len();
            for m in mean {
                let noise: f32 = rng.sample(StandardNormal);
                data.push(m + noise);
            }
            records.push(record(i, split, BTreeMap::from([("shifted".to_string(), flag)])));
        }
    }
    SyntheticDataset {
        manifest: Manifest {
            image_root: None,
            instances: records,
        },
        space: LatentSpace::new("synthetic", 2, data).expect("finite gaussian draws"),
    }
}

/// Instances carry `n_attributes` independent Bernoulli(`prevalence`)
/// attributes; attribute `a` adds `offset` along axis `a` of a
/// `dim`-dimensional N(0, I) embedding. Attributes are named `attr0`, `attr1`, ...
pub fn attribute_offsets(
    n_train: usize,
    n_test: usize,
    n_attributes: usize,
    dim: usize,
    offset: f32,
    prevalence: f64,
    seed: u64,
) -> SyntheticDataset {
    assert!(n_attributes <= dim, "each attribute needs its own axis");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n_train + n_test);
    let mut data = Vec::with_capacity((n_train + n_test) * dim);
    for i in 0..n_train + n_test {
        let split = if i < n_train { Split::Train } else { Split::Test };
        let flags: Vec<bool> = (0..n_attributes).map(|_| rng.random_bool(prevalence)).collect();
        for axis in 0..dim {
            let noise: f32 = rng.sample(StandardNormal);
            let shift = if flags.get(axis).copied().unwrap_or(false) {
                offset
            } else {
                0.0
            };
            data.push(noise + shift);
        }
        let attrs = flags
            .iter()
            .enumerate()
            .map(|(a, f)| (format!("attr{a}"), u8::from(*f)))
            .collect();
        records.push(record(i, split, attrs));
    }
    SyntheticDataset {
        manifest: Manifest {
            image_root: None,
            instances: records,
        },
        space: LatentSpace::new("synthetic", dim, data).expect("finite gaussian draws"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_shift_layout() {
        let ds = gaussian_shift(10, 8, 2, [5.0, 5.0], 1);
        let store = ds.store().unwrap();
        assert_eq!(store.train_indices().len(), 10);
        assert_eq!(store.test_indices().len(), 10);
        let shifted = ds.attribute("shifted");
        assert_eq!(shifted.iter().filter(|s| **s).count(), 2);
        assert!(shifted[18] && shifted[19] && !shifted[17]);
    }

    #[test]
    fn attribute_offsets_layout() {
        let ds = attribute_offsets(20, 20, 3, 5, 5.0, 0.5, 2);
        assert_eq!(ds.space.dim(), 5);
        let attr = ds.attribute("attr1");
        let mean = |flag: bool| {
            let vals: Vec<f32> = ds
                .space
                .rows()
                .zip(&attr)
                .filter(|(_, a)| **a == flag)
                .map(|(r, _)| r[1])
                .collect();
            vals.iter().sum::<f32>() / vals.len() as f32
        };
        assert!(mean(true) - mean(false) > 3.5);
        assert_eq!(ds.manifest.instances[0].attributes.as_ref().unwrap().len(), 3);
        assert_eq!(
            attribute_offsets(20, 20, 3, 5, 5.0, 0.5, 2).space,
            ds.space,
            "seeded"
        );
    }
}
