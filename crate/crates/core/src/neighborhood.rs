//! Exact distances and the adaptive-radius neighborhood around a focal instance.

use crate::data::{AnalysisStore, LatentSpace, Split};
use crate::error::{Error, Result};

pub const DEFAULT_TARGET_TEST_COUNT: usize = 100;
pub const DEFAULT_MIN_COUNT: usize = 10;

/// Euclidean distance, accumulated in `f64`.
pub fn pairwise_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// `(index, distance)` for each candidate, ascending by distance then index.
fn sorted_distances(space: &LatentSpace, query: usize, candidates: &[usize]) -> Vec<(usize, f64)> {
    let q = space.row(query);
    let mut out: Vec<(usize, f64)> = candidates
        .iter()
        .filter(|&&i| i != query)
        .map(|&i| (i, pairwise_distance(q, space.row(i)).expect("rows share the space dim")))
        .collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    out
}

/// The `k` nearest instances to `query` (excluding itself), optionally
/// restricted to one split. Ties go to the lower instance index.
pub fn knn(
    store: &AnalysisStore,
    space_name: &str,
    split: Option<Split>,
    query: usize,
    k: usize,
) -> Result<Vec<usize>> {
    let space = store.space(space_name)?;
    check_index(store, query)?;
    let all: Vec<usize>;
    let candidates = match split {
        Some(s) => store.indices_of(s),
        None => {
            all = (0..store.len()).collect();
            &all
        }
    };
    let mut sorted = sorted_distances(space, query, candidates);
    sorted.truncate(k);
    Ok(sorted.into_iter().map(|(i, _)| i).collect())
}

fn check_index(store: &AnalysisStore, index: usize) -> Result<()> {
    if index >= store.len() {
        return Err(Error::UnknownInstance(index.to_string()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub focus_index: usize,
    pub space_name: String,
    pub radius: f64,
    /// Ascending by distance, ties by index.
    pub train_members: Vec<Neighbor>,
    pub test_members: Vec<Neighbor>,
}

impl Neighborhood {
    pub fn train_indices(&self) -> Vec<usize> {
        self.train_members.iter().map(|n| n.index).collect()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.test_members.iter().map(|n| n.index).collect()
    }
}

/// Radius is the distance to the `max(target, min_count)`-th nearest test
/// instance (or the farthest one when the split is smaller); every train and
/// test instance within it is a member. The focus is never its own member.
pub fn adaptive_neighborhood(
    store: &AnalysisStore,
    space_name: &str,
    focus: usize,
    target_test_count: usize,
    min_count: usize,
) -> Result<Neighborhood> {
    let space = store.space(space_name)?;
    check_index(store, focus)?;
    let test = sorted_distances(space, focus, store.test_indices());
    let wanted = target_test_count.max(min_count).max(1);
    let radius = match test.get(wanted - 1).or(test.last()) {
        Some(&(_, d)) => d,
        None => 0.0,
    };
    let within = |v: Vec<(usize, f64)>| -> Vec<Neighbor> {
        v.into_iter()
            .take_while(|&(_, d)| d <= radius)
            .map(|(index, distance)| Neighbor { index, distance })
            .collect()
    };
    let train = sorted_distances(space, focus, store.train_indices());
    Ok(Neighborhood {
        focus_index: focus,
        space_name: space_name.to_string(),
        radius,
        train_members: within(train),
        test_members: within(test),
    })
}
