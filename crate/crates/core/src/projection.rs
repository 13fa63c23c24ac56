//! 2D overview coordinates for the test split.
//!
//! The built-in projector is a two-component PCA computed with power
//! iteration; coordinates from an external tool can be imported instead.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::AnalysisStore;
use crate::error::{Error, Result};

const POWER_TOLERANCE: f64 = 1e-10;
const POWER_MAX_ITER: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMethod {
    Pca,
    External,
}

/// A fitted two-component PCA.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector2D {
    pub mean: Vec<f64>,
    /// Orthonormal; the largest-magnitude coordinate of each is positive.
    pub components: [Vec<f64>; 2],
    /// Variance captured by each component (population normalization).
    pub explained_variance: [f64; 2],
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Applies the population covariance of the centered rows to `v`.
fn covariance_apply(centered: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for row in centered {
        let p = dot(row, v);
        for (o, x) in out.iter_mut().zip(row) {
            *o += p * x;
        }
    }
    let n = centered.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

fn orthogonalize(v: &mut [f64], against: &[f64]) {
    let p = dot(v, against);
    v.iter_mut().zip(against).for_each(|(x, a)| *x -= p * a);
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (k, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = k;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Power iteration for the dominant eigenvector orthogonal to `deflate`.
fn power_iterate(
    centered: &[Vec<f64>],
    variances: &[f64],
    total_variance: f64,
    deflate: Option<&[f64]>,
) -> (Vec<f64>, f64) {
    let dim = variances.len();
    // Start from the axis of largest remaining variance.
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| variances[b].total_cmp(&variances[a]).then(a.cmp(&b)));
    let mut v = vec![0.0; dim];
    for &axis in &order {
        v.iter_mut().for_each(|x| *x = 0.0);
        v[axis] = 1.0;
        if let Some(d) = deflate {
            orthogonalize(&mut v, d);
        }
        if normalize(&mut v) > 1e-8 {
            break;
        }
    }
    let mut eigenvalue = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let mut next = covariance_apply(centered, &v);
        if let Some(d) = deflate {
            orthogonalize(&mut next, d);
        }
        let norm = normalize(&mut next);
        if norm <= 1e-13 * total_variance {
            // Only rounding noise is left: `v` spans a null direction.
            return (v, 0.0);
        }
        eigenvalue = norm;
        // The sign of a power step is stable once converged; compare up to sign.
        let diff = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if diff < POWER_TOLERANCE {
            break;
        }
    }
    let cv = covariance_apply(centered, &v);
    let rayleigh = dot(&v, &cv);
    (v, if rayleigh.is_finite() { rayleigh.max(0.0) } else { eigenvalue })
}

pub fn fit_pca2(points: &[&[f32]]) -> Result<Projector2D> {
    if points.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            found: points.len(),
        });
    }
    let dim = points[0].len();
    if dim < 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: dim,
        });
    }
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: p.len(),
        });
    }
    let n = points.len() as f64;
    let mut mean = vec![0.0; dim];
    for p in points {
        for (m, v) in mean.iter_mut().zip(*p) {
            *m += f64::from(*v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let centered: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(v, m)| f64::from(*v) - m).collect())
        .collect();
    let variances: Vec<f64> = (0..dim)
        .map(|k| centered.iter().map(|r| r[k] * r[k]).sum::<f64>() / n)
        .collect();
    if variances.iter().all(|v| *v == 0.0) {
        return Err(Error::DegenerateVariance);
    }
    let total: f64 = variances.iter().sum();
    let (mut first, var1) = power_iterate(&centered, &variances, total, None);
    fix_sign(&mut first);
    let residual: Vec<f64> = (0..dim)
        .map(|k| {
            let proj: f64 = centered.iter().map(|r| (r[k] - dot(r, &first) * first[k]).powi(2)).sum();
            proj / n
        })
        .collect();
    let (mut second, var2) = power_iterate(&centered, &residual, total, Some(&first));
    orthogonalize(&mut second, &first);
    normalize(&mut second);
    fix_sign(&mut second);
    Ok(Projector2D {
        mean,
        components: [first, second],
        explained_variance: [var1, var2],
    })
}

impl Projector2D {
    pub fn project(&self, point: &[f32]) -> Result<[f64; 2]> {
        if point.len() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                found: point.len(),
            });
        }
        let centered: Vec<f64> = point.iter().zip(&self.mean).map(|(v, m)| f64::from(*v) - m).collect();
        Ok([dot(&centered, &self.components[0]), dot(&centered, &self.components[1])])
    }
}

pub fn project2(projector: &Projector2D, points: &[&[f32]]) -> Result<Vec<[f64; 2]>> {
    points.iter().map(|p| projector.project(p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    pub index: usize,
    pub x: f64,
    pub y: f64,
}

/// Coordinates served by the overview scatter.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub method: ProjectionMethod,
    pub points: Vec<ProjectedPoint>,
}

impl Projection {
    /// Fits PCA on the test rows of `space_name` and projects them.
    pub fn pca_of_test_split(store: &AnalysisStore, space_name: &str) -> Result<Self> {
        let space = store.space(space_name)?;
        let test = store.test_indices();
        let rows: Vec<&[f32]> = test.iter().map(|&i| space.row(i)).collect();
        let projector = fit_pca2(&rows)?;
        let coords = project2(&projector, &rows)?;
        Ok(Self {
            method: ProjectionMethod::Pca,
            points: test
                .iter()
                .zip(coords)
                .map(|(&index, [x, y])| ProjectedPoint { index, x, y })
                .collect(),
        })
    }

    pub fn write_csv(&self, store: &AnalysisStore, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::Parse(format!("projection csv: {e}"));
        w.write_record(["id", "x", "y"]).map_err(err)?;
        for p in &self.points {
            w.write_record([store.instance(p.index).id.as_str(), &p.x.to_string(), &p.y.to_string()])
                .map_err(err)?;
        }
        w.flush().map_err(|e| Error::Parse(format!("projection csv: {e}")))
    }

    /// Reads `id,x,y`. Every test instance must have coordinates; rows
    /// are kept in file order.
    pub fn read_csv(store: &AnalysisStore, reader: impl Read, method: ProjectionMethod) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            id: String,
            x: f64,
            y: f64,
        }
        let mut points = Vec::new();
        let mut seen = HashMap::new();
        for rec in csv::Reader::from_reader(reader).deserialize::<Row>() {
            let rec = rec.map_err(|e| Error::Parse(format!("projection csv: {e}")))?;
            if !(rec.x.is_finite() && rec.y.is_finite()) {
                return Err(Error::Parse(format!("non-finite coordinate for {:?}", rec.id)));
            }
            let index = store.index_of(&rec.id)?;
            if seen.insert(index, ()).is_some() {
                return Err(Error::DuplicateId(rec.id));
            }
            points.push(ProjectedPoint {
                index,
                x: rec.x,
                y: rec.y,
            });
        }
        if let Some(&missing) = store.test_indices().iter().find(|i| !seen.contains_key(i)) {
            return Err(Error::CoverageGap(store.instance(missing).id.clone()));
        }
        Ok(Self { method, points })
    }

    pub fn save(&self, store: &AnalysisStore, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(store, std::io::BufWriter::new(file))
    }

    pub fn load(store: &AnalysisStore, path: impl AsRef<Path>, method: ProjectionMethod) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(store, std::io::BufReader::new(file), method)
    }
}

/// Imports coordinates computed elsewhere.
pub fn load_external_projection(store: &AnalysisStore, path: impl AsRef<Path>) -> Result<Projection> {
    Projection::load(store, path, ProjectionMethod::External)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{InstanceRecord, LatentSpace, Split};
    use nalgebra::{DMatrix, SymmetricEigen};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn refs(rows: &[Vec<f32>]) -> Vec<&[f32]> {
        rows.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn diagonal_line() {
        let rows: Vec<Vec<f32>> = (0..10).map(|i| vec![i as f32, i as f32]).collect();
        let p = fit_pca2(&refs(&rows)).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((p.components[0][0] - h).abs() < 1e-9 && (p.components[0][1] - h).abs() < 1e-9);
        assert!(p.explained_variance[1].abs() < 1e-9);
        assert!(dot(&p.components[0], &p.components[1]).abs() < 1e-9);
        assert!((dot(&p.components[1], &p.components[1]) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn axis_aligned_variances() {
        let rows = vec![vec![3.0, 1.0], vec![3.0, -1.0], vec![-3.0, 1.0], vec![-3.0, -1.0]];
        let p = fit_pca2(&refs(&rows)).unwrap();
        assert_eq!(p.components[0], [1.0, 0.0]);
        assert_eq!(p.components[1], [0.0, 1.0]);
        assert!((p.explained_variance[0] - 9.0).abs() < 1e-12);
        assert!((p.explained_variance[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let two = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert!(matches!(fit_pca2(&refs(&two)), Err(Error::TooFewPoints { .. })));
        let same = vec![vec![1.0, 1.0]; 4];
        assert!(matches!(fit_pca2(&refs(&same)), Err(Error::DegenerateVariance)));
        let flat = vec![vec![1.0]; 4];
        assert!(fit_pca2(&refs(&flat)).is_err());
    }

    fn random_cloud(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scales: Vec<f32> = (0..dim).map(|k| 3.0 / (1.0 + k as f32)).collect();
        (0..n)
            .map(|_| {
                let base: Vec<f32> = scales.iter().map(|s| rng.random_range(-1.0f32..1.0) * s).collect();
                // Mix axes so components are not axis-aligned.
                (0..dim).map(|k| base[k] + 0.3 * base[(k + 1) % dim]).collect()
            })
            .collect()
    }

    #[test]
    fn matches_dense_eigensolver() {
        let rows = random_cloud(200, 5, 3);
        let p = fit_pca2(&refs(&rows)).unwrap();
        let n = rows.len();
        let data = DMatrix::from_fn(n, 5, |i, k| rows[i][k] as f64);
        let mean = data.row_mean();
        let centered = DMatrix::from_fn(n, 5, |i, k| data[(i, k)] - mean[k]);
        let cov = centered.transpose() * &centered / n as f64;
        let eig = SymmetricEigen::new(cov);
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| b.total_cmp(a));

        let coords = project2(&p, &refs(&rows)).unwrap();
        for c in 0..2 {
            let m = coords.iter().map(|x| x[c]).sum::<f64>() / n as f64;
            let var = coords.iter().map(|x| (x[c] - m).powi(2)).sum::<f64>() / n as f64;
            assert!((var - vals[c]).abs() < 1e-6, "component {c}: {var} vs {}", vals[c]);
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn projection_examples() {
        let rows = random_cloud(50, 4, 9);
        let p = fit_pca2(&refs(&rows)).unwrap();
        let mean: Vec<f32> = p.mean.iter().map(|m| *m as f32).collect();
        let at_mean = p.project(&mean).unwrap();
        assert!(at_mean[0].abs() < 1e-6 && at_mean[1].abs() < 1e-6);
        let shifted: Vec<f64> = p.mean.iter().zip(&p.components[0]).map(|(m, c)| m + c).collect();
        // Evaluate in f64 to avoid f32 rounding of the probe.
        let centered: Vec<f64> = shifted.iter().zip(&p.mean).map(|(s, m)| s - m).collect();
        assert!((dot(&centered, &p.components[0]) - 1.0).abs() < 1e-12);
        assert!(dot(&centered, &p.components[1]).abs() < 1e-9);
        for (row, xy) in rows.iter().zip(project2(&p, &refs(&rows)).unwrap()) {
            for c in 0..2 {
                let manual: f64 = (0..4).map(|k| (row[k] as f64 - p.mean[k]) * p.components[c][k]).sum();
                assert!((manual - xy[c]).abs() < 1e-12);
            }
        }
        assert!(p.project(&[1.0]).is_err());
    }

    #[test]
    fn sign_convention_and_determinism() {
        let rows = random_cloud(80, 6, 1);
        let a = fit_pca2(&refs(&rows)).unwrap();
        assert_eq!(a, fit_pca2(&refs(&rows)).unwrap());
        for comp in &a.components {
            let max = comp.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(max > 0.0);
        }
    }

    fn store(n_train: usize, n_test: usize) -> AnalysisStore {
        let rows = random_cloud(n_train + n_test, 3, 4);
        let recs = (0..n_train + n_test)
            .map(|i| InstanceRecord {
                id: format!("i{i}"),
                split: if i < n_train { Split::Train } else { Split::Test },
                image_path: String::new(),
                attributes: None,
            })
            .collect();
        AnalysisStore::new(recs, vec![LatentSpace::from_rows("z", &rows).unwrap()]).unwrap()
    }

    #[test]
    fn csv_round_trip_and_coverage() {
        let s = store(5, 10);
        let p = Projection::pca_of_test_split(&s, "z").unwrap();
        assert_eq!(p.points.len(), 10);
        let mut buf = Vec::new();
        p.write_csv(&s, &mut buf).unwrap();
        let back = Projection::read_csv(&s, buf.as_slice(), ProjectionMethod::Pca).unwrap();
        assert_eq!(back, p);

        let text = String::from_utf8(buf).unwrap();
        let short: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            Projection::read_csv(&s, short.as_bytes(), ProjectionMethod::External),
            Err(Error::CoverageGap(_))
        ));
        assert!(matches!(
            Projection::read_csv(&s, "id,x,y\ni5,abc,1\n".as_bytes(), ProjectionMethod::External),
            Err(Error::Parse(_))
        ));
    }
}
