//! Suspicion scores: the density-ratio scorer and two embedding baselines.
//!
//! Every scorer produces a raw score where larger means more suspicious. Raw
//! scores are min-max normalized over all instances of both splits into a
//! suspicion value in `[0, 1]`.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AnalysisStore, LatentSpace};
use crate::dre::RatioModel;
use crate::error::{Error, Result};

/// Added to ratios before taking the log.
pub const RATIO_EPSILON: f64 = 1e-12;
const EULER_GAMMA: f64 = 0.577_215_664_9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    DensityRatio,
    IsolationForest,
    CenterDistance,
}

impl ScoreMethod {
    pub const ALL: [ScoreMethod; 3] = [
        ScoreMethod::DensityRatio,
        ScoreMethod::IsolationForest,
        ScoreMethod::CenterDistance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMethod::DensityRatio => "density_ratio",
            ScoreMethod::IsolationForest => "isolation_forest",
            ScoreMethod::CenterDistance => "center_distance",
        }
    }
}

impl std::fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ScoreMethod {
    type Err = Error;

    /// Accepts the canonical names and the short command-line spellings.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "density_ratio" | "density-ratio" => Ok(ScoreMethod::DensityRatio),
            "isolation_forest" | "isolation-forest" | "iforest" => Ok(ScoreMethod::IsolationForest),
            "center_distance" | "center-distance" | "center" => Ok(ScoreMethod::CenterDistance),
            other => Err(Error::Parse(format!("unknown scoring method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRow {
    pub index: usize,
    pub raw: f64,
    pub ratio: Option<f64>,
    pub suspicion: f64,
}

/// One row per instance, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub method: ScoreMethod,
    pub space_name: String,
    rows: Vec<ScoreRow>,
}

impl ScoreTable {
    /// Builds a table from raw scores (one per instance, manifest order).
    pub fn from_raw(
        method: ScoreMethod,
        space_name: impl Into<String>,
        raw: Vec<f64>,
        ratios: Option<Vec<f64>>,
    ) -> Result<Self> {
        if let Some(r) = &ratios {
            if r.len() != raw.len() {
                return Err(Error::DimensionMismatch {
                    expected: raw.len(),
                    found: r.len(),
                });
            }
        }
        let suspicion = normalize_scores(&raw)?;
        let rows = raw
            .iter()
            .zip(suspicion)
            .enumerate()
            .map(|(index, (&raw, suspicion))| ScoreRow {
                index,
                raw,
                ratio: ratios.as_ref().map(|r| r[index]),
                suspicion,
            })
            .collect();
        Ok(Self {
            method,
            space_name: space_name.into(),
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[ScoreRow] {
        &self.rows
    }

    pub fn get(&self, index: usize) -> Option<&ScoreRow> {
        self.rows.get(index)
    }

    pub fn suspicion(&self, index: usize) -> Result<f64> {
        self.rows
            .get(index)
            .map(|r| r.suspicion)
            .ok_or(Error::ScoreCoverageGap(index))
    }

    /// Writes `id,split,method,space,raw,ratio,suspicion`.
    pub fn write_csv(&self, store: &AnalysisStore, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::Parse(format!("scores csv: {e}"));
        w.write_record(["id", "split", "method", "space", "raw", "ratio", "suspicion"])
            .map_err(err)?;
        for row in &self.rows {
            let rec = store.instance(row.index);
            let ratio = row.ratio.map(|r| r.to_string()).unwrap_or_default();
            w.write_record([
                rec.id.as_str(),
                rec.split.as_str(),
                self.method.as_str(),
                self.space_name.as_str(),
                &row.raw.to_string(),
                &ratio,
                &row.suspicion.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::Parse(format!("scores csv: {e}")))
    }

    /// Reads a scores file; rows may come in any order but must cover every instance.
    pub fn read_csv(store: &AnalysisStore, reader: impl Read) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            id: String,
            #[allow(dead_code)]
            split: String,
            method: String,
            space: String,
            raw: f64,
            ratio: Option<f64>,
            suspicion: f64,
        }
        let mut rdr = csv::Reader::from_reader(reader);
        let mut rows: Vec<Option<ScoreRow>> = vec![None; store.len()];
        let mut meta: Option<(ScoreMethod, String)> = None;
        for rec in rdr.deserialize::<Row>() {
            let rec = rec.map_err(|e| Error::Parse(format!("scores csv: {e}")))?;
            let method: ScoreMethod = rec.method.parse()?;
            match &meta {
                None => meta = Some((method, rec.space.clone())),
                Some((m, s)) if *m != method || *s != rec.space => {
                    return Err(Error::Parse("scores csv mixes methods or spaces".into()));
                }
                Some(_) => {}
            }
            if !(0.0..=1.0).contains(&rec.suspicion) {
                return Err(Error::OutOfRange(rec.suspicion));
            }
            let index = store.index_of(&rec.id)?;
            rows[index] = Some(ScoreRow {
                index,
                raw: rec.raw,
                ratio: rec.ratio,
                suspicion: rec.suspicion,
            });
        }
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.ok_or(Error::ScoreCoverageGap(i)))
            .collect::<Result<Vec<_>>>()?;
        let (method, space_name) = meta.ok_or_else(|| Error::Parse("scores csv is empty".into()))?;
        Ok(Self {
            method,
            space_name,
            rows,
        })
    }

    pub fn save(&self, store: &AnalysisStore, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(store, std::io::BufWriter::new(file))
    }

    pub fn load(store: &AnalysisStore, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(store, std::io::BufReader::new(file))
    }
}

/// Min-max normalization into `[0, 1]`; a constant input maps to all zeros.
pub fn normalize_scores(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, found: 0 });
    }
    if let Some(pos) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { row: pos, col: 0 });
    }
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi == lo {
        return Ok(vec![0.0; raw.len()]);
    }
    let span = hi - lo;
    Ok(raw.iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect())
}

/// Raw suspicion `-ln(r + eps)`: decreasing in the ratio.
pub fn raw_from_ratio(ratio: f64) -> Result<f64> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::NonPositiveRatio(ratio));
    }
    Ok(-(ratio + RATIO_EPSILON).ln())
}

/// Scores a full set of ratios (manifest order).
pub fn suspicion_from_ratio(space_name: &str, ratios: &[f64]) -> Result<ScoreTable> {
    let raw = ratios
        .iter()
        .map(|&r| raw_from_ratio(r))
        .collect::<Result<Vec<_>>>()?;
    ScoreTable::from_raw(ScoreMethod::DensityRatio, space_name, raw, Some(ratios.to_vec()))
}

/// Euclidean distance from `point` to the mean of `points`.
pub fn center_distance_score(points: &[&[f32]], point: &[f32]) -> Result<f64> {
    let center = mean_vector(points)?;
    euclid_to(&center, point)
}

pub(crate) fn mean_vector(points: &[&[f32]]) -> Result<Vec<f64>> {
    let first = points.first().ok_or(Error::TooFewPoints { needed: 1, found: 0 })?;
    let mut mean = vec![0.0; first.len()];
    for p in points {
        if p.len() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                found: p.len(),
            });
        }
        for (m, v) in mean.iter_mut().zip(*p) {
            *m += f64::from(*v);
        }
    }
    let n = points.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

fn euclid_to(center: &[f64], point: &[f32]) -> Result<f64> {
    if center.len() != point.len() {
        return Err(Error::DimensionMismatch {
            expected: center.len(),
            found: point.len(),
        });
    }
    Ok(center
        .iter()
        .zip(point)
        .map(|(c, p)| (f64::from(*p) - c).powi(2))
        .sum::<f64>()
        .sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub subsample: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            subsample: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IsoNode {
    Leaf {
        size: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: Box<IsoNode>,
        right: Box<IsoNode>,
    },
}

impl IsoNode {
    /// Path length of `point`, augmented with `c(size)` at the leaf.
    fn path_length(&self, point: &[f32], depth: usize) -> f64 {
        match self {
            IsoNode::Leaf { size } => depth as f64 + average_path_length(*size),
            IsoNode::Split {
                dim,
                value,
                left,
                right,
            } => {
                let next = if f64::from(point[*dim]) <= *value { left } else { right };
                next.path_length(point, depth + 1)
            }
        }
    }

    pub fn max_depth(&self) -> usize {
        match self {
            IsoNode::Leaf { .. } => 0,
            IsoNode::Split { left, right, .. } => 1 + left.max_depth().max(right.max_depth()),
        }
    }
}

/// Ensemble of random axis-aligned isolation trees.
#[derive(Debug, Clone, PartialEq)]
pub struct IsolationForest {
    pub params: ForestParams,
    pub dim: usize,
    /// Effective subsample size used for every tree (`min(subsample, n)`).
    pub sample_size: usize,
    pub trees: Vec<IsoNode>,
}

/// Harmonic-number approximation `ln k + gamma`.
fn harmonic(k: f64) -> f64 {
    k.ln() + EULER_GAMMA
}

/// Average unsuccessful-search path length in a binary search tree of `n` points.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * harmonic(n - 1.0) - 2.0 * (n - 1.0) / n
        }
    }
}

/// `2^(-mean_path / c(n))`.
pub fn anomaly_score(mean_path: f64, sample_size: usize) -> f64 {
    let c = average_path_length(sample_size);
    if c == 0.0 {
        return 0.5;
    }
    2f64.powf(-mean_path / c)
}

pub fn fit_isolation_forest(points: &[&[f32]], params: ForestParams) -> Result<IsolationForest> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            found: points.len(),
        });
    }
    if params.n_trees == 0 || params.subsample < 2 {
        return Err(Error::InvalidConfig(
            "isolation forest needs at least one tree and a subsample of 2".into(),
        ));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: p.len(),
        });
    }
    let sample_size = params.subsample.min(points.len());
    let height_limit = (sample_size as f64).log2().ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let trees = (0..params.n_trees)
        .map(|_| {
            let mut idx = sample(&mut rng, points.len(), sample_size).into_vec();
            idx.sort_unstable();
            grow(points, &mut idx, 0, height_limit, &mut rng)
        })
        .collect();
    Ok(IsolationForest {
        params,
        dim,
        sample_size,
        trees,
    })
}

fn grow(
    points: &[&[f32]],
    idx: &mut [usize],
    depth: usize,
    limit: usize,
    rng: &mut ChaCha8Rng,
) -> IsoNode {
    if depth >= limit || idx.len() <= 1 {
        return IsoNode::Leaf { size: idx.len() };
    }
    let dim = points[idx[0]].len();
    // Only dimensions with a non-zero range can split the node.
    let ranges: Vec<(usize, f64, f64)> = (0..dim)
        .filter_map(|d| {
            let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = f64::from(points[i][d]);
                (lo.min(v), hi.max(v))
            });
            (hi > lo).then_some((d, lo, hi))
        })
        .collect();
    if ranges.is_empty() {
        return IsoNode::Leaf { size: idx.len() };
    }
    let (d, lo, hi) = ranges[rng.random_range(0..ranges.len())];
    let value = rng.random_range(lo..hi);
    let mut cut = 0;
    for k in 0..idx.len() {
        if f64::from(points[idx[k]][d]) <= value {
            idx.swap(k, cut);
            cut += 1;
        }
    }
    let (left, right) = idx.split_at_mut(cut);
    IsoNode::Split {
        dim: d,
        value,
        left: Box::new(grow(points, left, depth + 1, limit, rng)),
        right: Box::new(grow(points, right, depth + 1, limit, rng)),
    }
}

impl IsolationForest {
    pub fn mean_path_length(&self, point: &[f32]) -> Result<f64> {
        if point.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: point.len(),
            });
        }
        let total: f64 = self.trees.iter().map(|t| t.path_length(point, 0)).sum();
        Ok(total / self.trees.len() as f64)
    }

    pub fn score(&self, point: &[f32]) -> Result<f64> {
        Ok(anomaly_score(self.mean_path_length(point)?, self.sample_size))
    }
}

pub fn iforest_score(forest: &IsolationForest, point: &[f32]) -> Result<f64> {
    forest.score(point)
}

/// What [`score_dataset`] should run.
#[derive(Debug, Clone, Copy)]
pub enum Scorer<'a> {
    DensityRatio(Option<&'a RatioModel>),
    IsolationForest(ForestParams),
    CenterDistance,
}

impl Scorer<'_> {
    pub fn method(&self) -> ScoreMethod {
        match self {
            Scorer::DensityRatio(_) => ScoreMethod::DensityRatio,
            Scorer::IsolationForest(_) => ScoreMethod::IsolationForest,
            Scorer::CenterDistance => ScoreMethod::CenterDistance,
        }
    }
}

/// Raw scores of `targets`, fitting the scorer on `train` and `test` indices of `space`.
///
/// The isolation forest is fitted on the union of both index sets; the
/// center-distance baseline uses the mean of the `train` rows.
pub fn raw_scores(
    scorer: Scorer<'_>,
    space: &LatentSpace,
    train: &[usize],
    test: &[usize],
    targets: &[usize],
) -> Result<Vec<f64>> {
    match scorer {
        Scorer::DensityRatio(model) => {
            let model = model.ok_or(Error::MissingModel)?;
            targets
                .iter()
                .map(|&i| raw_from_ratio(model.ratio(space.row(i))?))
                .collect()
        }
        Scorer::IsolationForest(params) => {
            let pts: Vec<&[f32]> = train.iter().chain(test).map(|&i| space.row(i)).collect();
            let forest = fit_isolation_forest(&pts, params)?;
            targets.iter().map(|&i| forest.score(space.row(i))).collect()
        }
        Scorer::CenterDistance => {
            let pts: Vec<&[f32]> = train.iter().map(|&i| space.row(i)).collect();
            let center = mean_vector(&pts)?;
            targets.iter().map(|&i| euclid_to(&center, space.row(i))).collect()
        }
    }
}

/// Scores every instance of the store (both splits) in `space_name`.
pub fn score_dataset(store: &AnalysisStore, space_name: &str, scorer: Scorer<'_>) -> Result<ScoreTable> {
    let space = store.space(space_name)?;
    if let Scorer::DensityRatio(None) = scorer {
        return Err(Error::MissingModel);
    }
    store.require_both_splits()?;
    let all: Vec<usize> = (0..store.len()).collect();
    let train = store.train_indices();
    let test = store.test_indices();
    match scorer {
        Scorer::DensityRatio(Some(model)) => {
            let ratios = space
                .rows()
                .map(|z| model.ratio(z))
                .collect::<Result<Vec<_>>>()?;
            suspicion_from_ratio(space_name, &ratios)
        }
        _ => {
            let raw = raw_scores(scorer, space, train, test, &all)?;
            ScoreTable::from_raw(scorer.method(), space_name, raw, None)
        }
    }
}
