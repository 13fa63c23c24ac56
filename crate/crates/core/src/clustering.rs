//! Ward agglomerative clustering of the test split, cluster ranking by mean
//! suspicion, and centroid-matched train contrast sets.

use std::io::{Read, Write};
use std::path::Path;

use serde::Deserialize;

use crate::data::{AnalysisStore, LatentSpace};
use crate::error::{Error, Result};
use crate::scoring::ScoreTable;

pub const DEFAULT_N_CLUSTERS: usize = 100;
pub const DEFAULT_TOP_K: usize = 10;
pub const REPRESENTATIVES: usize = 9;
pub const DEFAULT_CONTRAST_CAP: usize = 50;

/// Ward merge cost: the increase in within-cluster sum of squares,
/// `|A||B| / (|A|+|B|) * ||c_A - c_B||^2`.
fn ward_cost(size_a: usize, ca: &[f64], size_b: usize, cb: &[f64]) -> f64 {
    let (na, nb) = (size_a as f64, size_b as f64);
    let sq: f64 = ca.iter().zip(cb).map(|(x, y)| (x - y) * (x - y)).sum();
    na * nb / (na + nb) * sq
}

struct WardState {
    size: Vec<usize>,
    centroid: Vec<Vec<f64>>,
    active: Vec<bool>,
    /// Nearest active slot with a larger index, with its cost.
    nn: Vec<Option<usize>>,
    min_cost: Vec<f64>,
    /// `false` when `min_cost` is only a lower bound.
    fresh: Vec<bool>,
}

impl WardState {
    fn cost(&self, a: usize, b: usize) -> f64 {
        ward_cost(self.size[a], &self.centroid[a], self.size[b], &self.centroid[b])
    }

    fn rescan(&mut self, i: usize) {
        let mut best: Option<(usize, f64)> = None;
        for j in i + 1..self.size.len() {
            if !self.active[j] {
                continue;
            }
            let c = self.cost(i, j);
            if best.is_none_or(|(_, b)| c < b) {
                best = Some((j, c));
            }
        }
        self.nn[i] = best.map(|b| b.0);
        self.min_cost[i] = best.map_or(f64::INFINITY, |b| b.1);
        self.fresh[i] = true;
    }
}

/// Greedy Ward clustering down to `n_clusters` groups.
///
/// Each step merges the pair with the smallest Ward cost; ties go to the
/// lexicographically smallest pair of cluster ids, where a cluster's id is
/// the smallest point index it contains. Returns one label per point,
/// numbered by first appearance.
pub fn ward_cluster(points: &[&[f32]], n_clusters: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if n_clusters == 0 {
        return Err(Error::InvalidConfig("n_clusters must be positive".into()));
    }
    if n < n_clusters {
        return Err(Error::TooFewPoints {
            needed: n_clusters,
            found: n,
        });
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: p.len(),
        });
    }
    let mut st = WardState {
        size: vec![1; n],
        centroid: points
            .iter()
            .map(|p| p.iter().map(|v| f64::from(*v)).collect())
            .collect(),
        active: vec![true; n],
        nn: vec![None; n],
        min_cost: vec![f64::INFINITY; n],
        fresh: vec![false; n],
    };
    for i in 0..n {
        st.rescan(i);
    }
    // Union-find style parent pointers: merged slot -> surviving slot.
    let mut parent: Vec<usize> = (0..n).collect();
    let mut remaining = n;
    while remaining > n_clusters {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if st.active[i]
                && st.nn[i].is_some()
                && best.is_none_or(|b| st.min_cost[i] < st.min_cost[b])
            {
                best = Some(i);
            }
        }
        let i = best.expect("at least two active clusters remain");
        if !st.fresh[i] {
            st.rescan(i);
            continue;
        }
        let j = st.nn[i].expect("selected slot has a neighbor");

        let (si, sj) = (st.size[i] as f64, st.size[j] as f64);
        let merged: Vec<f64> = st.centroid[i]
            .iter()
            .zip(&st.centroid[j])
            .map(|(a, b)| (si * a + sj * b) / (si + sj))
            .collect();
        st.centroid[i] = merged;
        st.size[i] += st.size[j];
        st.active[j] = false;
        parent[j] = i;
        remaining -= 1;
        st.rescan(i);

        for k in 0..j {
            if k == i || !st.active[k] || st.nn[k].is_none() {
                continue;
            }
            let nk = st.nn[k].unwrap();
            if nk == j || (k < i && nk == i) {
                // Cost to the merged cluster never drops below the old minimum.
                st.fresh[k] = false;
                if nk == j && k > i {
                    continue;
                }
                st.nn[k] = Some(i);
            } else if k < i && st.fresh[k] {
                let c = st.cost(k, i);
                if c < st.min_cost[k] || (c == st.min_cost[k] && i < nk) {
                    st.min_cost[k] = c;
                    st.nn[k] = Some(i);
                }
            }
        }
    }

    let root = |mut x: usize| {
        while parent[x] != x {
            x = parent[x];
        }
        x
    };
    let mut label_of_root = vec![usize::MAX; n];
    let mut next = 0;
    Ok((0..n)
        .map(|p| {
            let r = root(p);
            if label_of_root[r] == usize::MAX {
                label_of_root[r] = next;
                next += 1;
            }
            label_of_root[r]
        })
        .collect())
}

/// Cluster labels for the test split of one space.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub space_name: String,
    pub n_clusters: usize,
    /// Test-instance indices, manifest order.
    pub members: Vec<usize>,
    /// Label of `members[k]`.
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
}

impl ClusterAssignment {
    /// Builds an assignment from labels, recomputing centroids from `space`.
    pub fn from_labels(
        space: &LatentSpace,
        members: Vec<usize>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if members.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: members.len(),
                found: labels.len(),
            });
        }
        let n_clusters = labels.iter().max().map_or(0, |m| m + 1);
        let mut sums = vec![vec![0.0; space.dim()]; n_clusters];
        let mut counts = vec![0usize; n_clusters];
        for (&i, &l) in members.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(space.row(i)) {
                *s += f64::from(*v);
            }
        }
        if let Some(empty) = counts.iter().position(|c| *c == 0) {
            return Err(Error::UnknownCluster(empty));
        }
        for (s, c) in sums.iter_mut().zip(&counts) {
            s.iter_mut().for_each(|v| *v /= *c as f64);
        }
        Ok(Self {
            space_name: space.name().to_string(),
            n_clusters,
            members,
            labels,
            centroids: sums,
        })
    }

    pub fn cluster_members(&self, cluster_id: usize) -> Result<Vec<usize>> {
        if cluster_id >= self.n_clusters {
            return Err(Error::UnknownCluster(cluster_id));
        }
        Ok(self
            .members
            .iter()
            .zip(&self.labels)
            .filter(|(_, l)| **l == cluster_id)
            .map(|(i, _)| *i)
            .collect())
    }

    pub fn label_of(&self, index: usize) -> Option<usize> {
        self.members
            .iter()
            .position(|&m| m == index)
            .map(|k| self.labels[k])
    }

    /// Writes `id,cluster` for every clustered test instance.
    pub fn write_csv(&self, store: &AnalysisStore, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::Parse(format!("clusters csv: {e}"));
        w.write_record(["id", "cluster"]).map_err(err)?;
        for (&i, l) in self.members.iter().zip(&self.labels) {
            w.write_record([store.instance(i).id.as_str(), &l.to_string()])
                .map_err(err)?;
        }
        w.flush().map_err(|e| Error::Parse(format!("clusters csv: {e}")))
    }

    /// Reads `id,cluster`; the rows must cover exactly the test split.
    pub fn read_csv(store: &AnalysisStore, space_name: &str, reader: impl Read) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            id: String,
            cluster: usize,
        }
        let space = store.space(space_name)?;
        let mut by_index = vec![None; store.len()];
        for rec in csv::Reader::from_reader(reader).deserialize::<Row>() {
            let rec = rec.map_err(|e| Error::Parse(format!("clusters csv: {e}")))?;
            let i = store.index_of(&rec.id)?;
            if store.split_of(i) != crate::data::Split::Test {
                return Err(Error::Parse(format!("clustered instance {:?} is not a test instance", rec.id)));
            }
            by_index[i] = Some(rec.cluster);
        }
        let members = store.test_indices().to_vec();
        let labels = members
            .iter()
            .map(|&i| by_index[i].ok_or_else(|| Error::CoverageGap(store.instance(i).id.clone())))
            .collect::<Result<Vec<_>>>()?;
        Self::from_labels(space, members, labels)
    }

    pub fn save(&self, store: &AnalysisStore, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(store, std::io::BufWriter::new(file))
    }

    pub fn load(store: &AnalysisStore, space_name: &str, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(store, space_name, std::io::BufReader::new(file))
    }
}

/// Clusters the test split of `space_name`.
pub fn cluster_test_split(
    store: &AnalysisStore,
    space_name: &str,
    n_clusters: usize,
) -> Result<ClusterAssignment> {
    let space = store.space(space_name)?;
    let members = store.test_indices().to_vec();
    let rows: Vec<&[f32]> = members.iter().map(|&i| space.row(i)).collect();
    let labels = ward_cluster(&rows, n_clusters)?;
    ClusterAssignment::from_labels(space, members, labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSummary {
    pub cluster_id: usize,
    pub size: usize,
    pub mean_suspicion: f64,
    /// Up to nine members, descending suspicion.
    pub representatives: Vec<usize>,
}

/// Members ordered by descending suspicion, ties by ascending index.
fn by_suspicion_desc(indices: &mut [usize], scores: &ScoreTable) -> Result<()> {
    for &i in indices.iter() {
        scores.suspicion(i)?;
    }
    indices.sort_by(|&a, &b| {
        let (sa, sb) = (scores.rows()[a].suspicion, scores.rows()[b].suspicion);
        sb.total_cmp(&sa).then(a.cmp(&b))
    });
    Ok(())
}

/// The `top_k` clusters by mean member suspicion (ties by ascending id).
pub fn rank_clusters(
    assignment: &ClusterAssignment,
    scores: &ScoreTable,
    top_k: usize,
) -> Result<Vec<ClusterSummary>> {
    let mut groups = vec![Vec::new(); assignment.n_clusters];
    for (&i, &l) in assignment.members.iter().zip(&assignment.labels) {
        groups[l].push(i);
    }
    let mut summaries = groups
        .into_iter()
        .enumerate()
        .map(|(cluster_id, mut members)| {
            by_suspicion_desc(&mut members, scores)?;
            let total: f64 = members.iter().map(|&i| scores.rows()[i].suspicion).sum();
            Ok(ClusterSummary {
                cluster_id,
                size: members.len(),
                mean_suspicion: total / members.len() as f64,
                representatives: members.into_iter().take(REPRESENTATIVES).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    summaries.sort_by(|a, b| {
        b.mean_suspicion
            .total_cmp(&a.mean_suspicion)
            .then(a.cluster_id.cmp(&b.cluster_id))
    });
    summaries.truncate(top_k);
    Ok(summaries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastSet {
    /// Highest-suspicion cluster members, descending suspicion.
    pub test: Vec<usize>,
    /// Train instances nearest the centroid, same count, descending suspicion.
    pub train: Vec<usize>,
}

fn distance_to_centroid(centroid: &[f64], row: &[f32]) -> f64 {
    centroid
        .iter()
        .zip(row)
        .map(|(c, v)| (f64::from(*v) - c).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn cluster_contrast_set(
    store: &AnalysisStore,
    assignment: &ClusterAssignment,
    cluster_id: usize,
    scores: &ScoreTable,
    cap: usize,
) -> Result<ContrastSet> {
    let mut test = assignment.cluster_members(cluster_id)?;
    by_suspicion_desc(&mut test, scores)?;
    test.truncate(cap);

    let space = store.space(&assignment.space_name)?;
    let centroid = &assignment.centroids[cluster_id];
    let mut train: Vec<(usize, f64)> = store
        .train_indices()
        .iter()
        .map(|&i| (i, distance_to_centroid(centroid, space.row(i))))
        .collect();
    train.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut train: Vec<usize> = train.into_iter().take(test.len()).map(|p| p.0).collect();
    by_suspicion_desc(&mut train, scores)?;
    Ok(ContrastSet { test, train })
}
