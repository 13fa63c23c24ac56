//! Attribute-driven covariate-shift experiments scored by AUROC.
//!
//! For every binary attribute and polarity, the training set is restricted
//! to instances whose attribute equals the polarity while the test split is
//! left untouched; test instances with the other value are the shifted ones.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::AnalysisStore;
use crate::dre::{fit_ratio_model, TrainConfig};
use crate::error::{Error, Result};
use crate::scoring::{raw_scores, ForestParams, ScoreMethod, Scorer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Present,
    Absent,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Present => "present",
            Polarity::Absent => "absent",
        }
    }

    fn value(self) -> u8 {
        match self {
            Polarity::Present => 1,
            Polarity::Absent => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftExperiment {
    pub attribute: String,
    pub polarity: Polarity,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    /// `true` where the test instance's attribute differs from the polarity.
    pub ground_truth: Vec<bool>,
}

/// One experiment per (attribute, polarity), skipping those with an empty
/// training set or a single-class test split. Attributes are visited in
/// name order, `present` before `absent`.
pub fn generate_experiments(store: &AnalysisStore) -> Result<Vec<ShiftExperiment>> {
    if !store.has_attributes() {
        return Err(Error::NoAttributes);
    }
    let names: Vec<String> = store.instances()[0]
        .attributes
        .as_ref()
        .map(|a| a.keys().cloned().collect())
        .unwrap_or_default();
    let value = |i: usize, name: &str| -> u8 {
        store.instance(i).attributes.as_ref().and_then(|a| a.get(name)).copied().unwrap_or(0)
    };
    let mut out = Vec::new();
    for name in &names {
        for polarity in [Polarity::Present, Polarity::Absent] {
            let train_indices: Vec<usize> = store
                .train_indices()
                .iter()
                .copied()
                .filter(|&i| value(i, name) == polarity.value())
                .collect();
            let test_indices = store.test_indices().to_vec();
            let ground_truth: Vec<bool> = test_indices
                .iter()
                .map(|&i| value(i, name) != polarity.value())
                .collect();
            let positives = ground_truth.iter().filter(|g| **g).count();
            if train_indices.is_empty() || positives == 0 || positives == ground_truth.len() {
                continue;
            }
            out.push(ShiftExperiment {
                attribute: name.clone(),
                polarity,
                train_indices,
                test_indices,
                ground_truth,
            });
        }
    }
    Ok(out)
}

/// Probability that a random positive outscores a random negative, ties
/// counted half, via the Mann-Whitney rank sum with midranks.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: scores.len(),
        });
    }
    if let Some(pos) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteValue { row: pos, col: 0 });
    }
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Ranks start..end (1-based start+1..=end) share their mean.
        let mid = (start + 1 + end) as f64 / 2.0;
        let positives = order[start..end].iter().filter(|&&i| labels[i]).count();
        rank_sum += mid * positives as f64;
        start = end;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BenchConfig {
    pub train: TrainConfig,
    pub forest: ForestParams,
    /// Per-experiment seeds are `seed + experiment index`.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: ScoreMethod,
    pub space: String,
    pub attribute: String,
    pub polarity: Polarity,
    pub auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// Mean AUROC per method, in order of first appearance.
    pub fn means(&self) -> Vec<(ScoreMethod, f64)> {
        let mut out: Vec<(ScoreMethod, f64, usize)> = Vec::new();
        for row in &self.rows {
            match out.iter_mut().find(|(m, _, _)| *m == row.method) {
                Some(entry) => {
                    entry.1 += row.auroc;
                    entry.2 += 1;
                }
                None => out.push((row.method, row.auroc, 1)),
            }
        }
        out.into_iter().map(|(m, s, n)| (m, s / n as f64)).collect()
    }

    pub fn mean_of(&self, method: ScoreMethod) -> Option<f64> {
        self.means().into_iter().find(|(m, _)| *m == method).map(|(_, v)| v)
    }

    /// `method,space,attribute,polarity,auroc` rows followed by one
    /// `method,,MEAN,,value` row per method.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::Parse(format!("bench csv: {e}"));
        w.write_record(["method", "space", "attribute", "polarity", "auroc"])
            .map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.method.as_str(),
                &r.space,
                &r.attribute,
                r.polarity.as_str(),
                &r.auroc.to_string(),
            ])
            .map_err(err)?;
        }
        for (m, v) in self.means() {
            w.write_record([m.as_str(), "", "MEAN", "", &v.to_string()])
                .map_err(err)?;
        }
        w.flush().map_err(|e| Error::Parse(format!("bench csv: {e}")))
    }
}

fn run_experiment(
    store: &AnalysisStore,
    exp: &ShiftExperiment,
    seed: u64,
    methods: &[ScoreMethod],
    spaces: &[String],
    config: &BenchConfig,
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::with_capacity(methods.len() * spaces.len());
    for space_name in spaces {
        let space = store.space(space_name)?;
        for &method in methods {
            let raw = match method {
                ScoreMethod::DensityRatio => {
                    let train_config = TrainConfig { seed, ..config.train };
                    let (model, _) = fit_ratio_model(space, &exp.train_indices, &exp.test_indices, &train_config)?;
                    raw_scores(
                        Scorer::DensityRatio(Some(&model)),
                        space,
                        &exp.train_indices,
                        &exp.test_indices,
                        &exp.test_indices,
                    )?
                }
                ScoreMethod::IsolationForest => raw_scores(
                    Scorer::IsolationForest(ForestParams { seed, ..config.forest }),
                    space,
                    &exp.train_indices,
                    &exp.test_indices,
                    &exp.test_indices,
                )?,
                ScoreMethod::CenterDistance => raw_scores(
                    Scorer::CenterDistance,
                    space,
                    &exp.train_indices,
                    &exp.test_indices,
                    &exp.test_indices,
                )?,
            };
            rows.push(BenchRow {
                method,
                space: space_name.clone(),
                attribute: exp.attribute.clone(),
                polarity: exp.polarity,
                auroc: auroc(&raw, &exp.ground_truth)?,
            });
        }
    }
    Ok(rows)
}

/// Runs every experiment for every space and method. Experiments run in
/// parallel; rows are reported in experiment order, then space, then method.
pub fn run_benchmark(
    store: &AnalysisStore,
    methods: &[ScoreMethod],
    spaces: &[String],
    config: &BenchConfig,
) -> Result<BenchReport> {
    config.train.validate()?;
    for s in spaces {
        store.space(s)?;
    }
    let experiments = generate_experiments(store)?;
    run_experiments(store, &experiments, methods, spaces, config)
}

pub fn run_experiments(
    store: &AnalysisStore,
    experiments: &[ShiftExperiment],
    methods: &[ScoreMethod],
    spaces: &[String],
    config: &BenchConfig,
) -> Result<BenchReport> {
    let per_experiment = experiments
        .par_iter()
        .enumerate()
        .map(|(k, exp)| run_experiment(store, exp, config.seed.wrapping_add(k as u64), methods, spaces, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchReport {
        rows: per_experiment.into_iter().flatten().collect(),
    })
}
