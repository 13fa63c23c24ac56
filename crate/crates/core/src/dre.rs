//! KLIEP density-ratio network.
//!
//! The model maps an embedding `z` to a hidden representation
//! `d = max(0, W1 z + b1)` and a strictly positive ratio
//! `r(d) = ln(exp(W d + b) + 1)`. Training minimizes
//!
//! ```text
//! L = mean_test r(d) - mean_train ln r(d)
//! ```
//!
//! whose population minimizer is `r = p_train / p_test`: test instances that
//! the training distribution rarely produces get a small ratio.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AnalysisStore, LatentSpace};
use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN_DIM: usize = 32;

/// `ln(1 + e^x)` without overflow, floored at the smallest normal `f64` so
/// the ratio stays strictly positive after underflow.
pub fn softplus(x: f64) -> f64 {
    let y = if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    };
    y.max(f64::MIN_POSITIVE)
}

/// Logistic function, the derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 0.01,
            batch_size: 64,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if self.hidden_dim < 1 {
            return Err(Error::InvalidConfig("hidden dim must be at least 1".into()));
        }
        Ok(())
    }
}

/// Full-data KLIEP loss after each epoch.
pub type TrainHistory = Vec<f64>;

/// Two-layer ratio network. Matrices are row-major; `w1` is
/// `hidden_dim x input_dim`, `w` is the single output row.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioModel {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub seed: u64,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w: Vec<f64>,
    pub b: f64,
}

/// Gradient of the loss with respect to every [`RatioModel`] parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w: Vec<f64>,
    pub b: f64,
}

impl Gradient {
    fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w1: vec![0.0; input_dim * hidden_dim],
            b1: vec![0.0; hidden_dim],
            w: vec![0.0; hidden_dim],
            b: 0.0,
        }
    }

    /// Flattened in the same order as [`RatioModel::parameters`].
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.w1.len() + 2 * self.b1.len() + 1);
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w);
        v.push(self.b);
        v
    }
}

/// Output of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    /// Rectified hidden activations.
    pub hidden: Vec<f64>,
    /// Head pre-activation `W d + b`.
    pub logit: f64,
    pub ratio: f64,
}

impl RatioModel {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            seed: 0,
            w1: vec![0.0; input_dim * hidden_dim],
            b1: vec![0.0; hidden_dim],
            w: vec![0.0; hidden_dim],
            b: 0.0,
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::zeros(input_dim, hidden_dim);
        model.seed = seed;
        let a1 = 1.0 / (input_dim as f64).sqrt();
        for v in &mut model.w1 {
            *v = rng.random_range(-a1..a1);
        }
        let a2 = 1.0 / (hidden_dim as f64).sqrt();
        for v in &mut model.w {
            *v = rng.random_range(-a2..a2);
        }
        model
    }

    pub fn n_parameters(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w.len() + 1
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_parameters());
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w);
        v.push(self.b);
        v
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_parameters() {
            return Err(Error::DimensionMismatch {
                expected: self.n_parameters(),
                found: params.len(),
            });
        }
        let (w1, rest) = params.split_at(self.w1.len());
        let (b1, rest) = rest.split_at(self.hidden_dim);
        let (w, rest) = rest.split_at(self.hidden_dim);
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w.copy_from_slice(w);
        self.b = rest[0];
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.parameters().iter().all(|v| v.is_finite())
    }

    fn check_dim(&self, z: &[f32]) -> Result<()> {
        if z.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: z.len(),
            });
        }
        Ok(())
    }

    fn hidden_pre(&self, z: &[f32]) -> Vec<f64> {
        self.w1
            .chunks_exact(self.input_dim)
            .zip(&self.b1)
            .map(|(row, b)| {
                row.iter()
                    .zip(z)
                    .fold(*b, |acc, (w, x)| acc + w * f64::from(*x))
            })
            .collect()
    }

    pub fn forward(&self, z: &[f32]) -> Result<Forward> {
        self.check_dim(z)?;
        let hidden: Vec<f64> = self.hidden_pre(z).into_iter().map(|v| v.max(0.0)).collect();
        let logit = self
            .w
            .iter()
            .zip(&hidden)
            .fold(self.b, |acc, (w, d)| acc + w * d);
        Ok(Forward {
            hidden,
            logit,
            ratio: softplus(logit),
        })
    }

    pub fn ratio(&self, z: &[f32]) -> Result<f64> {
        self.forward(z).map(|f| f.ratio)
    }

    /// Adds the gradient contribution of one point whose loss derivative
    /// with respect to the ratio is `dl_dr`.
    fn accumulate(&self, z: &[f32], dl_dr: impl Fn(f64) -> f64, grad: &mut Gradient) {
        let pre = self.hidden_pre(z);
        let logit = self
            .w
            .iter()
            .zip(&pre)
            .fold(self.b, |acc, (w, p)| acc + w * p.max(0.0));
        let g = dl_dr(softplus(logit)) * sigmoid(logit);
        grad.b += g;
        for (h, &p) in pre.iter().enumerate() {
            if p > 0.0 {
                grad.w[h] += g * p;
                let gh = g * self.w[h];
                grad.b1[h] += gh;
                let row = &mut grad.w1[h * self.input_dim..(h + 1) * self.input_dim];
                for (gw, x) in row.iter_mut().zip(z) {
                    *gw += gh * f64::from(*x);
                }
            }
        }
    }
}

/// Forward pass returning the hidden representation and the ratio.
pub fn ratio_forward(model: &RatioModel, z: &[f32]) -> Result<(Vec<f64>, f64)> {
    model.forward(z).map(|f| (f.hidden, f.ratio))
}

/// `mean(test ratios) - mean(ln train ratios)`.
pub fn kliep_loss(ratios_test: &[f64], ratios_train: &[f64]) -> Result<f64> {
    if ratios_test.is_empty() {
        return Err(Error::SplitEmpty("test"));
    }
    if ratios_train.is_empty() {
        return Err(Error::SplitEmpty("train"));
    }
    if let Some(&bad) = ratios_test
        .iter()
        .chain(ratios_train)
        .find(|r| r.is_nan() || **r <= 0.0)
    {
        return Err(Error::NonPositiveRatio(bad));
    }
    let test_term = ratios_test.iter().sum::<f64>() / ratios_test.len() as f64;
    let train_term = ratios_train.iter().map(|r| r.ln()).sum::<f64>() / ratios_train.len() as f64;
    Ok(test_term - train_term)
}

/// Loss of `model` over the given batches.
pub fn batch_loss(model: &RatioModel, train: &[&[f32]], test: &[&[f32]]) -> Result<f64> {
    let r_test = test
        .iter()
        .map(|z| model.ratio(z))
        .collect::<Result<Vec<_>>>()?;
    let r_train = train
        .iter()
        .map(|z| model.ratio(z))
        .collect::<Result<Vec<_>>>()?;
    kliep_loss(&r_test, &r_train)
}

/// Analytic gradient of [`batch_loss`] with respect to every parameter.
pub fn kliep_gradient(model: &RatioModel, train: &[&[f32]], test: &[&[f32]]) -> Result<Gradient> {
    if test.is_empty() {
        return Err(Error::SplitEmpty("test"));
    }
    if train.is_empty() {
        return Err(Error::SplitEmpty("train"));
    }
    for z in train.iter().chain(test) {
        model.check_dim(z)?;
    }
    let mut grad = Gradient::zeros(model.input_dim, model.hidden_dim);
    let n_te = test.len() as f64;
    let n_tr = train.len() as f64;
    for z in test {
        model.accumulate(z, |_| 1.0 / n_te, &mut grad);
    }
    for z in train {
        model.accumulate(z, |r| -1.0 / (n_tr * r), &mut grad);
    }
    Ok(grad)
}

/// Model weights plus the metadata persisted in `model.json`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: RatioModel,
    pub config: TrainConfig,
    pub history: TrainHistory,
    /// Name of the input space the model was trained on.
    pub space: String,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    input_dim: usize,
    hidden_dim: usize,
    seed: u64,
    #[serde(rename = "W1")]
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    b: f64,
    config: TrainConfig,
    history: Vec<f64>,
    #[serde(default)]
    space: String,
}

impl TrainedModel {
    pub fn to_json(&self) -> String {
        let m = &self.model;
        let file = ModelFile {
            input_dim: m.input_dim,
            hidden_dim: m.hidden_dim,
            seed: m.seed,
            w1: m.w1.chunks(m.input_dim.max(1)).map(<[f64]>::to_vec).collect(),
            b1: m.b1.clone(),
            w: vec![m.w.clone()],
            b: m.b,
            config: self.config,
            history: self.history.clone(),
            space: self.space.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("model: {e}")))?;
        let shape_err = || Error::Parse("model: parameter shapes do not match dims".into());
        if f.w1.len() != f.hidden_dim
            || f.w1.iter().any(|r| r.len() != f.input_dim)
            || f.b1.len() != f.hidden_dim
            || f.w.len() != 1
            || f.w[0].len() != f.hidden_dim
        {
            return Err(shape_err());
        }
        let model = RatioModel {
            input_dim: f.input_dim,
            hidden_dim: f.hidden_dim,
            seed: f.seed,
            w1: f.w1.concat(),
            b1: f.b1,
            w: f.w.concat(),
            b: f.b,
        };
        if !model.all_finite() {
            return Err(Error::Parse("model: non-finite parameter".into()));
        }
        Ok(Self {
            model,
            config: f.config,
            history: f.history,
            space: f.space,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn collect_rows<'a>(space: &'a LatentSpace, indices: &[usize]) -> Vec<&'a [f32]> {
    indices.iter().map(|&i| space.row(i)).collect()
}

/// Minibatch SGD on the KLIEP loss between the `train` and `test` rows of `space`.
///
/// Every epoch shuffles both splits and walks them in paired batches. The
/// number of steps is set by the split with more batches; the other one
/// cycles through its own batches.
pub fn fit_ratio_model(
    space: &LatentSpace,
    train: &[usize],
    test: &[usize],
    config: &TrainConfig,
) -> Result<(RatioModel, TrainHistory)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::SplitEmpty("train"));
    }
    if test.is_empty() {
        return Err(Error::SplitEmpty("test"));
    }
    let mut model = RatioModel::init(space.dim(), config.hidden_dim, config.seed);
    // Separate stream so shuffling does not depend on the parameter count.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5a1e_d0e5_1e55);
    let all_train = collect_rows(space, train);
    let all_test = collect_rows(space, test);
    let mut train_order = train.to_vec();
    let mut test_order = test.to_vec();
    let bs = config.batch_size;
    let tr_batches = train.len().div_ceil(bs);
    let te_batches = test.len().div_ceil(bs);
    let steps = tr_batches.max(te_batches);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        train_order.shuffle(&mut rng);
        test_order.shuffle(&mut rng);
        for step in 0..steps {
            let tr = batch(&train_order, step % tr_batches, bs);
            let te = batch(&test_order, step % te_batches, bs);
            let grad = kliep_gradient(&model, &collect_rows(space, tr), &collect_rows(space, te))?;
            apply(&mut model, &grad, config.learning_rate);
            if !model.all_finite() {
                return Err(Error::DivergedLoss { epoch });
            }
        }
        let loss = batch_loss(&model, &all_train, &all_test)?;
        if !loss.is_finite() {
            return Err(Error::DivergedLoss { epoch });
        }
        history.push(loss);
    }
    Ok((model, history))
}

fn batch(order: &[usize], k: usize, size: usize) -> &[usize] {
    let start = k * size;
    &order[start..(start + size).min(order.len())]
}

fn apply(model: &mut RatioModel, grad: &Gradient, lr: f64) {
    for (p, g) in model.w1.iter_mut().zip(&grad.w1) {
        *p -= lr * g;
    }
    for (p, g) in model.b1.iter_mut().zip(&grad.b1) {
        *p -= lr * g;
    }
    for (p, g) in model.w.iter_mut().zip(&grad.w) {
        *p -= lr * g;
    }
    model.b -= lr * grad.b;
}

/// Hidden activations of every row of `space`, as a space named `"dre"`.
pub fn dre_latent(model: &RatioModel, space: &LatentSpace) -> Result<LatentSpace> {
    if space.dim() != model.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim,
            found: space.dim(),
        });
    }
    let mut data = Vec::with_capacity(space.len() * model.hidden_dim);
    for z in space.rows() {
        data.extend(model.forward(z)?.hidden.into_iter().map(|v| v as f32));
    }
    LatentSpace::new("dre", model.hidden_dim, data)
}

/// Result of [`train_dre`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trained: TrainedModel,
    pub latent: LatentSpace,
}

/// Trains on the train/test splits of `space_name` and derives the `"dre"` space.
pub fn train_dre(store: &AnalysisStore, space_name: &str, config: &TrainConfig) -> Result<TrainOutcome> {
    let space = store.space(space_name)?;
    store.require_both_splits()?;
    let (model, history) =
        fit_ratio_model(space, store.train_indices(), store.test_indices(), config)?;
    let latent = dre_latent(&model, space)?;
    Ok(TrainOutcome {
        trained: TrainedModel {
            model,
            config: *config,
            history,
            space: space_name.to_string(),
        },
        latent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    fn random_model(input_dim: usize, hidden: usize, seed: u64) -> RatioModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = RatioModel::zeros(input_dim, hidden);
        let params: Vec<f64> = (0..m.n_parameters())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        m.set_parameters(&params).unwrap();
        m
    }

    fn random_rows(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0f32..2.0)).collect())
            .collect()
    }

    /// Straight-line two-layer evaluation used as an oracle.
    #[allow(clippy::needless_range_loop)]
    fn scalar_forward(m: &RatioModel, z: &[f32]) -> (Vec<f64>, f64) {
        let mut d = vec![0.0; m.hidden_dim];
        for h in 0..m.hidden_dim {
            let mut s = m.b1[h];
            for k in 0..m.input_dim {
                s += m.w1[h * m.input_dim + k] * z[k] as f64;
            }
            d[h] = if s > 0.0 { s } else { 0.0 };
        }
        let mut a = m.b;
        for h in 0..m.hidden_dim {
            a += m.w[h] * d[h];
        }
        (d, (a.exp() + 1.0).ln())
    }

    #[test]
    fn zero_model_gives_ln2() {
        let m = RatioModel::zeros(3, 4);
        let (d, r) = ratio_forward(&m, &[1.0, -2.0, 3.0]).unwrap();
        assert!(d.iter().all(|v| *v == 0.0));
        assert!((r - LN2).abs() < 1e-15);
    }

    #[test]
    fn head_bias_only() {
        let mut m = RatioModel::zeros(2, 3);
        m.w = vec![0.3, -7.0, 2.0];
        m.b = 5.0;
        let r = m.ratio(&[4.0, 4.0]).unwrap();
        assert!((r - 5.006_715_348_489_118).abs() < 1e-12);
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let m = random_model(6, 5, 3);
        for z in random_rows(20, 6, 4) {
            let (d, r) = ratio_forward(&m, &z).unwrap();
            let (d2, r2) = scalar_forward(&m, &z);
            for (a, b) in d.iter().zip(&d2) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((r - r2).abs() < 1e-12 * r2.max(1.0));
        }
    }

    #[test]
    fn forward_rejects_wrong_dim() {
        let m = RatioModel::zeros(3, 2);
        assert!(matches!(
            m.forward(&[1.0]),
            Err(Error::DimensionMismatch { expected: 3, found: 1 })
        ));
    }

    #[test]
    fn loss_examples() {
        assert_eq!(kliep_loss(&[1.0, 1.0], &[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert!(kliep_loss(&[1.0], &[std::f64::consts::E]).unwrap().abs() < 1e-15);
        let l = kliep_loss(&[0.5, 2.0], &[1.0, 4.0]).unwrap();
        assert!((l - (1.25 - 4f64.ln() / 2.0)).abs() < 1e-15);
        assert!((l - 0.556_853).abs() < 1e-6);
    }

    #[test]
    fn loss_errors() {
        assert!(matches!(kliep_loss(&[], &[1.0]), Err(Error::SplitEmpty("test"))));
        assert!(matches!(kliep_loss(&[1.0], &[]), Err(Error::SplitEmpty("train"))));
        assert!(matches!(
            kliep_loss(&[1.0], &[0.0]),
            Err(Error::NonPositiveRatio(_))
        ));
        assert!(matches!(
            kliep_loss(&[f64::NAN], &[1.0]),
            Err(Error::NonPositiveRatio(_))
        ));
    }

    fn as_refs(rows: &[Vec<f32>]) -> Vec<&[f32]> {
        rows.iter().map(Vec::as_slice).collect()
    }

    fn finite_difference(m: &RatioModel, train: &[&[f32]], test: &[&[f32]], step: f64) -> Vec<f64> {
        let base = m.parameters();
        (0..base.len())
            .map(|k| {
                let mut probe = m.clone();
                let mut p = base.clone();
                p[k] = base[k] + step;
                probe.set_parameters(&p).unwrap();
                let up = batch_loss(&probe, train, test).unwrap();
                p[k] = base[k] - step;
                probe.set_parameters(&p).unwrap();
                let down = batch_loss(&probe, train, test).unwrap();
                (up - down) / (2.0 * step)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = random_model(5, 4, 11);
        let train = random_rows(20, 5, 12);
        let test = random_rows(20, 5, 13);
        let (train, test) = (as_refs(&train), as_refs(&test));
        let analytic = kliep_gradient(&m, &train, &test).unwrap().to_vec();
        let numeric = finite_difference(&m, &train, &test, 1e-4);
        for (a, f) in analytic.iter().zip(&numeric) {
            let rel = (a - f).abs() / a.abs().max(f.abs()).max(1e-8);
            assert!(rel <= 1e-4, "analytic {a} vs numeric {f}");
        }
    }

    #[test]
    fn gradient_vanishes_at_stationary_point() {
        // With the hidden layer dead, the loss depends on b only:
        // L(b) = softplus(b) - ln softplus(b), minimized where softplus(b) = 1.
        let mut m = RatioModel::zeros(2, 3);
        m.b1 = vec![-100.0; 3];
        m.b = (1f64.exp() - 1.0).ln();
        let train = random_rows(5, 2, 1);
        let test = random_rows(7, 2, 2);
        let (train, test) = (as_refs(&train), as_refs(&test));
        let numeric = finite_difference(&m, &train, &test, 1e-4);
        assert!(numeric.iter().all(|g| g.abs() < 1e-6));
        let analytic = kliep_gradient(&m, &train, &test).unwrap().to_vec();
        assert!(analytic.iter().all(|g| g.abs() < 1e-6));
    }

    #[test]
    fn head_gradient_closed_form_with_dead_rectifier() {
        // d = 0 for both points, so only b receives gradient:
        // dL/db = sigmoid(b) * (1 - 1/r(b)).
        let mut m = RatioModel::zeros(2, 2);
        m.b1 = vec![-50.0, -50.0];
        m.w = vec![0.4, -0.9];
        m.b = 0.7;
        let g = kliep_gradient(&m, &[&[1.0, 2.0]], &[&[0.5, -1.0]]).unwrap();
        let s = 1.0 / (1.0 + (-0.7f64).exp());
        let r = (0.7f64.exp() + 1.0).ln();
        assert!((g.b - s * (1.0 - 1.0 / r)).abs() < 1e-14);
        assert!(g.w.iter().chain(&g.b1).chain(&g.w1).all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_requires_both_batches() {
        let m = RatioModel::zeros(1, 1);
        assert!(matches!(
            kliep_gradient(&m, &[], &[&[1.0]]),
            Err(Error::SplitEmpty("train"))
        ));
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let a = RatioModel::init(9, 4, 7);
        let b = RatioModel::init(9, 4, 7);
        assert_eq!(a, b);
        assert!(a.w1.iter().all(|v| v.abs() <= 1.0 / 3.0));
        assert!(a.w.iter().all(|v| v.abs() <= 0.5));
        assert!(a.b1.iter().all(|v| *v == 0.0) && a.b == 0.0);
        assert_ne!(a, RatioModel::init(9, 4, 8));
    }

    #[test]
    fn latent_matches_forward() {
        assert!(dre_latent(
            &RatioModel::zeros(2, 3),
            &LatentSpace::new("z", 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()
        )
        .unwrap()
        .as_slice()
        .iter()
        .all(|v| *v == 0.0));

        let m = random_model(3, 5, 21);
        let rows = random_rows(10, 3, 22);
        let space = LatentSpace::from_rows("z", &rows).unwrap();
        let latent = dre_latent(&m, &space).unwrap();
        assert_eq!(latent.name(), "dre");
        assert_eq!(latent.dim(), 5);
        for (i, z) in rows.iter().enumerate() {
            let (d, _) = scalar_forward(&m, z);
            let expect: Vec<f32> = d.iter().map(|v| *v as f32).collect();
            assert_eq!(latent.row(i), expect.as_slice());
        }
        assert!(matches!(
            dre_latent(&m, &LatentSpace::new("w", 2, vec![0.0; 4]).unwrap()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn model_json_round_trip() {
        let trained = TrainedModel {
            model: random_model(3, 2, 5),
            config: TrainConfig::default(),
            history: vec![0.9, 0.8],
            space: "imagenet".into(),
        };
        let text = trained.to_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["W1"].as_array().unwrap().len(), 2);
        assert_eq!(v["W"].as_array().unwrap().len(), 1);
        let back = TrainedModel::from_json(&text).unwrap();
        assert_eq!(back, trained);
    }

    #[test]
    fn model_json_rejects_bad_shapes() {
        let trained = TrainedModel {
            model: random_model(3, 2, 5),
            config: TrainConfig::default(),
            history: vec![],
            space: String::new(),
        };
        let mut v: serde_json::Value = serde_json::from_str(&trained.to_json()).unwrap();
        v["hidden_dim"] = 3.into();
        assert!(TrainedModel::from_json(&v.to_string()).is_err());
    }

    proptest! {
        #[test]
        fn ratio_is_positive(seed in any::<u64>(), scale in 0.1f64..200.0) {
            let mut m = random_model(4, 3, seed);
            let p: Vec<f64> = m.parameters().iter().map(|v| v * scale).collect();
            m.set_parameters(&p).unwrap();
            for z in random_rows(5, 4, seed.wrapping_add(1)) {
                let f = m.forward(&z).unwrap();
                prop_assert!(f.ratio > 0.0);
            }
        }

        #[test]
        fn ranking_by_ratio_equals_ranking_by_logit(seed in any::<u64>()) {
            let m = random_model(3, 6, seed);
            let rows = random_rows(30, 3, seed ^ 1);
            let fw: Vec<Forward> = rows.iter().map(|z| m.forward(z).unwrap()).collect();
            let mut by_r: Vec<usize> = (0..fw.len()).collect();
            by_r.sort_by(|&a, &b| fw[a].ratio.total_cmp(&fw[b].ratio).then(a.cmp(&b)));
            let mut by_a: Vec<usize> = (0..fw.len()).collect();
            by_a.sort_by(|&a, &b| fw[a].logit.total_cmp(&fw[b].logit).then(a.cmp(&b)));
            prop_assert_eq!(by_r, by_a);
        }
    }
}
