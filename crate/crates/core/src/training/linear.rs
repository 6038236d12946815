//! Linear evaluation: one logistic regressor per label on frozen features.
//!
//! Features are standardized with training-split statistics. Every grid point
//! `(lr, wd)` trains all labels by full-batch gradient descent on
//! `mean BCE + (wd/2)‖w‖²`, each label stopping once its loss changes by less
//! than the tolerance. The grid point with the highest validation Micro-F1 wins;
//! ties keep the earlier point.

use ndarray::{Array1, Axis};
use serde::{Deserialize, Serialize};

use crate::data::LabelMatrix;
use crate::error::{Error, Result};
use crate::evaluation::micro_f1;
use crate::numerics::{Mask, Matrix};

pub const DECISION_THRESHOLD: f64 = 0.5;
/// Prior used for a label with no training positive.
const ABSENT_PRIOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearEvalConfig {
    pub lrs: Vec<f64>,
    pub weight_decays: Vec<f64>,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for LinearEvalConfig {
    fn default() -> Self {
        Self {
            lrs: vec![1.0, 0.1],
            weight_decays: vec![1e-2, 1e-4],
            tolerance: 1e-8,
            max_iterations: 5000,
        }
    }
}

impl LinearEvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lrs.is_empty() || self.weight_decays.is_empty() {
            return Err(Error::config("linear-eval grid must be non-empty"));
        }
        if self.lrs.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::config("linear-eval learning rates must be positive"));
        }
        if self.weight_decays.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::config("linear-eval weight decays must be non-negative"));
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::config("linear-eval tolerance and max_iterations must be positive"));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-column mean and standard deviation; constant columns keep scale 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::domain("cannot standardize an empty feature matrix"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("features must be finite"));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        (x - &self.mean) / &self.scale
    }
}

/// Per-label logistic classifiers plus the selected hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub standardizer: Standardizer,
    /// `h × L`.
    pub weights: Matrix,
    pub bias: Array1<f64>,
    pub lr: f64,
    pub weight_decay: f64,
    pub val_micro_f1: f64,
    /// Labels with no training positive; their classifier is the (clamped) prior.
    pub absent_labels: Vec<usize>,
}

impl LinearProbe {
    /// Positive-class probabilities, `n × L`.
    pub fn scores(&self, features: &Matrix) -> Matrix {
        let z = self.standardizer.apply(features).dot(&self.weights) + &self.bias;
        z.mapv(sigmoid)
    }

    pub fn predict(&self, features: &Matrix) -> (Matrix, Mask) {
        let scores = self.scores(features);
        let pred = scores.mapv(|p| p >= DECISION_THRESHOLD);
        (scores, pred)
    }
}

/// Gradient descent for all labels at once; columns freeze independently.
fn fit_grid_point(x: &Matrix, y: &Matrix, trainable: &[bool], lr: f64, wd: f64, cfg: &LinearEvalConfig) -> (Matrix, Array1<f64>) {
    let (n, h) = x.dim();
    let l = y.ncols();
    let mut w = Matrix::zeros((h, l));
    let mut b = Array1::zeros(l);
    let mut active: Vec<bool> = trainable.to_vec();
    let mut previous = vec![f64::INFINITY; l];
    for _ in 0..cfg.max_iterations {
        if !active.iter().any(|&a| a) {
            break;
        }
        let z = x.dot(&w) + &b;
        let mut residual = Matrix::zeros((n, l));
        let mut loss = vec![0.0; l];
        for ((idx, &zi), &yi) in z.indexed_iter().zip(y.iter()) {
            // BCE = softplus(z) - y z; e = exp(-|z|) serves both terms.
            let e = (-zi.abs()).exp();
            let p = if zi >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
            residual[idx] = (p - yi) / n as f64;
            loss[idx.1] += (zi.max(0.0) + e.ln_1p() - yi * zi) / n as f64;
        }
        for j in 0..l {
            if !active[j] {
                continue;
            }
            let total = loss[j] + 0.5 * wd * w.column(j).dot(&w.column(j));
            if (previous[j] - total).abs() < cfg.tolerance {
                active[j] = false;
            }
            previous[j] = total;
        }
        let gw = x.t().dot(&residual);
        let gb = residual.sum_axis(Axis(0));
        for j in (0..l).filter(|&j| active[j]) {
            let mut col = w.column_mut(j);
            col.zip_mut_with(&gw.column(j), |w, &g| *w -= lr * (g + wd * *w));
            b[j] -= lr * gb[j];
        }
    }
    (w, b)
}

/// Fits the probe on `train` and selects hyperparameters on `val` (falling
/// back to `train` when `val` is empty).
pub fn linear_eval(
    train: (&Matrix, &LabelMatrix),
    val: (&Matrix, &LabelMatrix),
    cfg: &LinearEvalConfig,
) -> Result<LinearProbe> {
    cfg.validate()?;
    let (xt, yt) = train;
    if xt.nrows() != yt.len() || val.0.nrows() != val.1.len() {
        return Err(Error::domain("features and labels disagree on instance count"));
    }
    let standardizer = Standardizer::fit(xt)?;
    let xs = standardizer.apply(xt);
    let y = yt.dense();
    let l = yt.num_labels();
    let positives = y.sum_axis(Axis(0));
    let absent_labels: Vec<usize> = (0..l).filter(|&j| positives[j] == 0.0).collect();
    let trainable: Vec<bool> = (0..l).map(|j| positives[j] > 0.0).collect();
    let prior_bias = (ABSENT_PRIOR / (1.0 - ABSENT_PRIOR)).ln();

    let (xv, yv) = if val.0.nrows() > 0 { val } else { train };
    let truth = yv.mask();
    let mut best: Option<LinearProbe> = None;
    for &lr in &cfg.lrs {
        for &wd in &cfg.weight_decays {
            let (weights, mut bias) = fit_grid_point(&xs, &y, &trainable, lr, wd, cfg);
            for &j in &absent_labels {
                bias[j] = prior_bias;
            }
            let mut probe = LinearProbe {
                standardizer: standardizer.clone(),
                weights,
                bias,
                lr,
                weight_decay: wd,
                val_micro_f1: 0.0,
                absent_labels: absent_labels.clone(),
            };
            let (_, pred) = probe.predict(xv);
            probe.val_micro_f1 = micro_f1(pred.view(), truth.view())?;
            if best.as_ref().is_none_or(|b| probe.val_micro_f1 > b.val_micro_f1) {
                best = Some(probe);
            }
        }
    }
    Ok(best.expect("grid is non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_labels(rng: &mut ChaCha8Rng, n: usize, l: usize, p: f64) -> LabelMatrix {
        let rows = (0..n).map(|_| (0..l).filter(|_| rng.random_bool(p)).collect()).collect();
        LabelMatrix::new(l, rows).unwrap()
    }

    #[test]
    fn informative_features_are_near_perfect() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y_train = random_labels(&mut rng, 200, 4, 0.3);
        let y_val = random_labels(&mut rng, 100, 4, 0.3);
        let probe = linear_eval((&y_train.dense(), &y_train), (&y_val.dense(), &y_val), &Default::default()).unwrap();
        assert!(probe.val_micro_f1 > 0.99, "{}", probe.val_micro_f1);
    }

    #[test]
    fn random_features_match_trivial_baseline() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y_train = random_labels(&mut rng, 400, 3, 0.6);
        let y_val = random_labels(&mut rng, 400, 3, 0.6);
        let noise = |rng: &mut ChaCha8Rng, n| Matrix::from_shape_simple_fn((n, 5), || rng.random_range(-1.0..1.0));
        let (xt, xv) = (noise(&mut rng, 400), noise(&mut rng, 400));
        let probe = linear_eval((&xt, &y_train), (&xv, &y_val), &Default::default()).unwrap();
        // All-positive beats all-negative (F1 = 0) at prevalence 0.6.
        let all = Mask::from_elem((400, 3), true);
        let baseline = micro_f1(all.view(), y_val.mask().view()).unwrap();
        assert!((probe.val_micro_f1 - baseline).abs() < 0.05, "{} vs {baseline}", probe.val_micro_f1);
    }

    #[test]
    fn duplicate_columns_get_identical_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = random_labels(&mut rng, 120, 3, 0.4);
        let base = Matrix::from_shape_fn((120, 2), |(i, j)| y.dense()[[i, j]] + 0.5 * rng.random_range(-1.0..1.0));
        let dup = ndarray::concatenate(Axis(1), &[base.view(), base.column(0).insert_axis(Axis(1))]).unwrap();
        let cfg = LinearEvalConfig::default();
        let b = linear_eval((&dup, &y), (&dup, &y), &cfg).unwrap();
        for j in 0..3 {
            assert_eq!(b.weights[[0, j]], b.weights[[2, j]]);
        }
    }

    #[test]
    fn absent_label_uses_prior() {
        let y = LabelMatrix::new(2, vec![vec![0], vec![], vec![0], vec![]]).unwrap();
        let x = Matrix::from_shape_vec((4, 1), vec![1.0, -1.0, 1.2, -0.8]).unwrap();
        let probe = linear_eval((&x, &y), (&x, &y), &Default::default()).unwrap();
        assert_eq!(probe.absent_labels, vec![1]);
        let (scores, pred) = probe.predict(&x);
        assert!(scores.column(1).iter().all(|&p| (p - ABSENT_PRIOR).abs() < 1e-12));
        assert!(pred.column(1).iter().all(|&p| !p));
        assert!(pred.column(0).iter().zip([true, false, true, false]).all(|(&p, t)| p == t));
    }
}
