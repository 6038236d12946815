//! Non-contrastive losses on `n × L` logits.

use crate::data::LabelMatrix;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::numerics::Matrix;

/// Floor applied inside `log` where the asymmetric clip can reach 0.
const LOG_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct ClassicLoss {
    pub value: f64,
    /// `∂L/∂logits`.
    pub grad: Matrix,
}

fn check_shape(logits: &Matrix, labels: &LabelMatrix) -> Result<()> {
    let expected = (labels.len(), labels.num_labels());
    if logits.dim() != expected {
        return Err(Error::Shape {
            expected,
            actual: logits.dim(),
        });
    }
    Ok(())
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
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

/// Mean binary cross-entropy with a logistic link.
pub fn loss_bce(logits: &Matrix, labels: &LabelMatrix) -> Result<ClassicLoss> {
    check_shape(logits, labels)?;
    let y = labels.dense();
    let count = logits.len().max(1) as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(logits.dim());
    for ((idx, &x), &t) in logits.indexed_iter().zip(y.iter()) {
        // log p = -softplus(-x), log(1 - p) = -softplus(x)
        value += t * softplus(-x) + (1.0 - t) * softplus(x);
        grad[idx] = (sigmoid(x) - t) / count;
    }
    Ok(ClassicLoss {
        value: value / count,
        grad,
    })
}

/// Asymmetric loss with `s = max(ŷ - m, 0)` applied to both terms.
///
/// At `m = 0` the logs use the logistic identities, so `γ⁺ = γ⁻ = 0` reproduces
/// [`loss_bce`] term by term. At `ŷ = m` exactly the subgradient is 0. Where
/// the clip drives `s` to 0, `log s` saturates at `log 1e-8`.
pub fn loss_asymmetric(logits: &Matrix, labels: &LabelMatrix, cfg: &LossConfig) -> Result<ClassicLoss> {
    check_shape(logits, labels)?;
    cfg.validate()?;
    let (a, b, m) = (cfg.gamma_pos, cfg.gamma_neg, cfg.margin);
    let y = labels.dense();
    let count = logits.len().max(1) as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(logits.dim());
    for ((idx, &x), &t) in logits.indexed_iter().zip(y.iter()) {
        let p = sigmoid(x);
        // term = t·(1-s)^a·log s + (1-t)·s^b·log(1-s); d term / dx below.
        let (term, dterm) = if m == 0.0 {
            let log_p = -softplus(-x);
            let log_q = -softplus(x);
            let q = 1.0 - p;
            let pos = q.powf(a) * log_p;
            let neg = p.powf(b) * log_q;
            let dpos = q.powf(a) * q - if a == 0.0 { 0.0 } else { a * p * q.powf(a) * log_p };
            let dneg = -p.powf(b) * p + if b == 0.0 { 0.0 } else { b * p.powf(b) * q * log_q };
            (t * pos + (1.0 - t) * neg, t * dpos + (1.0 - t) * dneg)
        } else {
            let s = (p - m).max(0.0);
            let ds = if p > m { p * (1.0 - p) } else { 0.0 };
            let sc = s.max(LOG_FLOOR);
            let pos = (1.0 - s).powf(a) * sc.ln();
            let neg = s.powf(b) * (1.0 - s).ln();
            let (dpos, dneg) = if ds == 0.0 {
                (0.0, 0.0)
            } else {
                let dpos_ds = (if s > LOG_FLOOR { (1.0 - s).powf(a) / s } else { 0.0 })
                    - if a == 0.0 { 0.0 } else { a * (1.0 - s).powf(a - 1.0) * sc.ln() };
                let dneg_ds = (if b == 0.0 { 0.0 } else { b * s.powf(b - 1.0) * (1.0 - s).ln() })
                    - s.powf(b) / (1.0 - s);
                (dpos_ds * ds, dneg_ds * ds)
            };
            (t * pos + (1.0 - t) * neg, t * dpos + (1.0 - t) * dneg)
        };
        value -= term;
        grad[idx] = -dterm / count;
    }
    Ok(ClassicLoss {
        value: value / count,
        grad,
    })
}

/// `log(1 + Σ_pos e^{-s}) + log(1 + Σ_neg e^{s})`, averaged over instances.
pub fn loss_zlpr(logits: &Matrix, labels: &LabelMatrix) -> Result<ClassicLoss> {
    check_shape(logits, labels)?;
    let n = logits.nrows().max(1) as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(logits.dim());
    for (i, row) in logits.rows().into_iter().enumerate() {
        // Signed exponents: -s for positives, +s for negatives; the implicit 0 is the threshold.
        let signed: Vec<f64> = row
            .iter()
            .enumerate()
            .map(|(j, &s)| if labels.has(i, j) { -s } else { s })
            .collect();
        for positive in [true, false] {
            let group: Vec<usize> = (0..signed.len()).filter(|&j| labels.has(i, j) == positive).collect();
            let top = group.iter().map(|&j| signed[j]).fold(0.0f64, f64::max);
            let total = (-top).exp() + group.iter().map(|&j| (signed[j] - top).exp()).sum::<f64>();
            value += top + total.ln();
            for &j in &group {
                let w = (signed[j] - top).exp() / total;
                grad[[i, j]] = if positive { -w } else { w } / n;
            }
        }
    }
    Ok(ClassicLoss { value: value / n, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_difference_gradient;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_case(seed: u64, n: usize, l: usize) -> (Matrix, LabelMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = Matrix::from_shape_simple_fn((n, l), || rng.random_range(-3.0..3.0));
        let rows = (0..n)
            .map(|_| (0..l).filter(|_| rng.random_bool(0.4)).collect())
            .collect();
        (logits, LabelMatrix::new(l, rows).unwrap())
    }

    fn fd_check<F: Fn(&Matrix) -> ClassicLoss>(logits: &Matrix, f: F, tol: f64) {
        let analytic = f(logits).grad;
        let fd = finite_difference_gradient(|x| f(x).value, logits, 1e-5).unwrap();
        for (a, b) in analytic.iter().zip(fd.iter()) {
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
            assert!(rel < tol, "analytic {a} vs fd {b}");
        }
    }

    #[test]
    fn bce_closed_forms() {
        let y = LabelMatrix::new(3, vec![vec![0, 2], vec![1]]).unwrap();
        let zero = loss_bce(&Matrix::zeros((2, 3)), &y).unwrap();
        assert!((zero.value - 2f64.ln()).abs() < 1e-15);
        let capped = y.dense().mapv(|t| if t > 0.0 { 800.0 } else { -800.0 });
        assert_eq!(loss_bce(&capped, &y).unwrap().value, 0.0);
    }

    #[test]
    fn bce_and_zlpr_match_fd() {
        let (logits, y) = random_case(3, 3, 4);
        fd_check(&logits, |x| loss_bce(x, &y).unwrap(), 1e-6);
        fd_check(&logits, |x| loss_zlpr(x, &y).unwrap(), 1e-6);
    }

    #[test]
    fn asymmetric_reduces_to_bce() {
        let cfg = LossConfig {
            gamma_pos: 0.0,
            gamma_neg: 0.0,
            margin: 0.0,
            ..Default::default()
        };
        for seed in 0..5 {
            let (logits, y) = random_case(seed, 5, 6);
            let asy = loss_asymmetric(&logits, &y, &cfg).unwrap();
            let bce = loss_bce(&logits, &y).unwrap();
            assert!((asy.value - bce.value).abs() < 1e-12);
            for (a, b) in asy.grad.iter().zip(bce.grad.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn asymmetric_defaults_match_fd() {
        let cfg = LossConfig::default();
        let (logits, y) = random_case(11, 3, 4);
        fd_check(&logits, |x| loss_asymmetric(x, &y, &cfg).unwrap(), 1e-6);
        let clipped = LossConfig {
            margin: 0.2,
            gamma_pos: 1.0,
            gamma_neg: 2.0,
            ..Default::default()
        };
        let (logits, y) = random_case(12, 4, 5);
        let safe = logits.iter().all(|&x| (sigmoid(x) - 0.2).abs() > 1e-3);
        assert!(safe);
        fd_check(&logits, |x| loss_asymmetric(x, &y, &clipped).unwrap(), 1e-6);
    }

    #[test]
    fn asymmetric_full_margin_saturates() {
        let cfg = LossConfig {
            margin: 1.0,
            ..Default::default()
        };
        let (logits, y) = random_case(5, 3, 4);
        let out = loss_asymmetric(&logits, &y, &cfg).unwrap();
        let positives = y.dense().sum();
        let expected = -positives * LOG_FLOOR.ln() / 12.0;
        assert!((out.value - expected).abs() < 1e-12);
        assert!(out.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zlpr_closed_forms() {
        let y = LabelMatrix::new(5, vec![vec![0, 1], vec![0, 1, 2, 3, 4]]).unwrap();
        let out = loss_zlpr(&Matrix::zeros((1, 5)), &y.select(&[0])).unwrap();
        assert!((out.value - (3f64.ln() + 4f64.ln())).abs() < 1e-15);
        let big = Matrix::from_elem((1, 5), 800.0);
        assert_eq!(loss_zlpr(&big, &y.select(&[1])).unwrap().value, 0.0);
    }
}
