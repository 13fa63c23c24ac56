//! Side-by-side suspicion histograms: train members on the left, test
//! members on the right, equal-width bins over `[0, 1]`, highest bin first.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scoring::ScoreTable;

pub const DEFAULT_BINS: usize = 5;

/// What a histogram is centred on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Subject {
    Instance(usize),
    Cluster(usize),
}

/// Lower edge of bin `b`.
pub fn bin_lower(b: usize, n_bins: usize) -> f64 {
    b as f64 / n_bins as f64
}

/// Bin index of a suspicion value; bins are `[b/n, (b+1)/n)` except the
/// last, which also holds `1.0`.
pub fn bin_of(suspicion: f64, n_bins: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&suspicion) {
        return Err(Error::OutOfRange(suspicion));
    }
    if n_bins == 0 {
        return Err(Error::InvalidConfig("histogram needs at least one bin".into()));
    }
    let mut b = ((suspicion * n_bins as f64).floor() as usize).min(n_bins - 1);
    // Keep the index consistent with the edges as computed by `bin_lower`.
    while b > 0 && suspicion < bin_lower(b, n_bins) {
        b -= 1;
    }
    while b + 1 < n_bins && suspicion >= bin_lower(b + 1, n_bins) {
        b += 1;
    }
    Ok(b)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    /// Instance indices, descending suspicion.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl HistogramBin {
    pub fn contains(&self, suspicion: f64, top: bool) -> bool {
        suspicion >= self.lo && (suspicion < self.hi || (top && suspicion <= self.hi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SideBySideHistogram {
    pub subject: Subject,
    pub n_bins: usize,
    /// Highest interval first.
    pub bins: Vec<HistogramBin>,
}

impl SideBySideHistogram {
    pub fn train_counts(&self) -> Vec<usize> {
        self.bins.iter().map(|b| b.train.len()).collect()
    }

    pub fn test_counts(&self) -> Vec<usize> {
        self.bins.iter().map(|b| b.test.len()).collect()
    }
}

pub fn build_side_by_side(
    train: &[usize],
    test: &[usize],
    scores: &ScoreTable,
    subject: Subject,
    n_bins: usize,
) -> Result<SideBySideHistogram> {
    if n_bins == 0 {
        return Err(Error::InvalidConfig("histogram needs at least one bin".into()));
    }
    let mut bins: Vec<HistogramBin> = (0..n_bins)
        .rev()
        .map(|b| HistogramBin {
            lo: bin_lower(b, n_bins),
            hi: bin_lower(b + 1, n_bins),
            train: Vec::new(),
            test: Vec::new(),
        })
        .collect();
    for (side, members) in [(false, train), (true, test)] {
        for &i in members {
            let s = scores.suspicion(i)?;
            let slot = n_bins - 1 - bin_of(s, n_bins)?;
            let bin = &mut bins[slot];
            if side {
                bin.test.push(i);
            } else {
                bin.train.push(i);
            }
        }
    }
    let key = |i: &usize| scores.rows()[*i].suspicion;
    for bin in &mut bins {
        for list in [&mut bin.train, &mut bin.test] {
            list.sort_by(|a, b| key(b).total_cmp(&key(a)).then(a.cmp(b)));
        }
    }
    Ok(SideBySideHistogram {
        subject,
        n_bins,
        bins,
    })
}
