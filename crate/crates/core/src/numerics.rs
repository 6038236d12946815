//! Dense kernels shared by every loss: tempered cosine similarity (and its
//! backward pass), the masked log-softmax, and a central-difference gradient
//! oracle.
//!
//! Everything here is `f64`; the gradient checks run at a `1e-5` relative
//! tolerance, which single precision cannot meet.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};

/// Row-major real matrix. Embeddings, prototypes and similarity tables all use it.
pub type Matrix = Array2<f64>;

/// Boolean mask with the same shape as the logits it filters.
pub type Mask = Array2<bool>;

/// Output of [`masked_log_softmax`].
///
/// `sigma` is treated as a constant by all gradient code that consumes it
/// (the detach semantics of the regularizer).
#[derive(Debug, Clone)]
pub struct MaskedSoftmax {
    /// Log-probabilities; masked entries hold `-inf`.
    pub log_p: Matrix,
    /// Probabilities; masked entries are exactly `0.0`.
    pub sigma: Matrix,
    /// Per-row `log Σ_unmasked exp(logit)`.
    pub log_normalizer: Array1<f64>,
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::config(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// Euclidean norm of every row. Fails on the first zero-norm row.
pub fn row_norms(a: ArrayView2<f64>) -> Result<Array1<f64>> {
    let norms: Array1<f64> = a.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if let Some(idx) = norms.iter().position(|&n| !(n > 0.0) || !n.is_finite()) {
        return Err(Error::domain(format!("row {idx} has zero (or non-finite) norm")));
    }
    Ok(norms)
}

fn normalize_rows(a: ArrayView2<f64>, norms: &Array1<f64>) -> Matrix {
    let mut out = a.to_owned();
    for (mut row, &n) in out.rows_mut().into_iter().zip(norms) {
        row /= n;
    }
    out
}

/// `S_ij = <a_i, b_j> / (tau * |a_i| * |b_j|)`.
pub fn tempered_cosine_matrix(a: ArrayView2<f64>, b: ArrayView2<f64>, tau: f64) -> Result<Matrix> {
    check_tau(tau)?;
    if a.ncols() != b.ncols() {
        return Err(Error::Shape {
            expected: (b.nrows(), a.ncols()),
            actual: b.dim(),
        });
    }
    let a_hat = normalize_rows(a, &row_norms(a)?);
    let b_hat = normalize_rows(b, &row_norms(b)?);
    Ok(a_hat.dot(&b_hat.t()) / tau)
}

/// Backward pass of [`tempered_cosine_matrix`]: given `G = dL/dS`, returns
/// `(dL/dA, dL/dB)`, exact through the row normalization.
pub fn tempered_cosine_backward(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    tau: f64,
    grad_s: ArrayView2<f64>,
) -> Result<(Matrix, Matrix)> {
    check_tau(tau)?;
    if grad_s.dim() != (a.nrows(), b.nrows()) {
        return Err(Error::Shape {
            expected: (a.nrows(), b.nrows()),
            actual: grad_s.dim(),
        });
    }
    let a_norm = row_norms(a)?;
    let b_norm = row_norms(b)?;
    let a_hat = normalize_rows(a, &a_norm);
    let b_hat = normalize_rows(b, &b_norm);
    let cos = a_hat.dot(&b_hat.t());
    let weighted = &grad_s * &cos;

    // d cos(a, b) / d a = (b_hat - cos * a_hat) / |a|
    let mut da = grad_s.dot(&b_hat);
    let ra = weighted.sum_axis(Axis(1));
    Zip::from(da.rows_mut())
        .and(a_hat.rows())
        .and(&ra)
        .and(&a_norm)
        .for_each(|mut row, ah, &r, &n| {
            row.scaled_add(-r, &ah);
            row /= tau * n;
        });

    let mut db = grad_s.t().dot(&a_hat);
    let rb = weighted.sum_axis(Axis(0));
    Zip::from(db.rows_mut())
        .and(b_hat.rows())
        .and(&rb)
        .and(&b_norm)
        .for_each(|mut row, bh, &r, &n| {
            row.scaled_add(-r, &bh);
            row /= tau * n;
        });
    Ok((da, db))
}

/// Row-wise log-softmax restricted to the unmasked (`true`) entries.
///
/// Logits are expected to be already tempered. The per-row maximum over the
/// unmasked entries is subtracted before exponentiation.
pub fn masked_log_softmax(logits: ArrayView2<f64>, mask: ArrayView2<bool>) -> Result<MaskedSoftmax> {
    if logits.dim() != mask.dim() {
        return Err(Error::Shape {
            expected: logits.dim(),
            actual: mask.dim(),
        });
    }
    let (n, m) = logits.dim();
    let mut log_p = Matrix::from_elem((n, m), f64::NEG_INFINITY);
    let mut sigma = Matrix::zeros((n, m));
    let mut log_normalizer = Array1::zeros(n);
    for i in 0..n {
        let row = logits.row(i);
        let keep = mask.row(i);
        let max = row
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(&x, _)| x)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::domain(format!("row {i} of the softmax is fully masked")));
        }
        let sum: f64 = row
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(&x, _)| (x - max).exp())
            .sum();
        let lse = max + sum.ln();
        log_normalizer[i] = lse;
        for j in 0..m {
            if keep[j] {
                log_p[[i, j]] = row[j] - lse;
                sigma[[i, j]] = (row[j] - max).exp() / sum;
            }
        }
    }
    Ok(MaskedSoftmax {
        log_p,
        sigma,
        log_normalizer,
    })
}

/// Central-difference gradient of a scalar function of a matrix.
///
/// `f` is evaluated twice per entry at `x ± h e_ij`.
pub fn finite_difference_gradient<F>(mut f: F, x: &Matrix, h: f64) -> Result<Matrix>
where
    F: FnMut(&Matrix) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::config(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = Matrix::zeros(x.dim());
    for ((i, j), g) in grad.indexed_iter_mut() {
        let orig = probe[[i, j]];
        probe[[i, j]] = orig + h;
        let up = f(&probe);
        probe[[i, j]] = orig - h;
        let down = f(&probe);
        probe[[i, j]] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Oracle(format!(
                "non-finite evaluation while perturbing entry ({i}, {j})"
            )));
        }
        *g = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn cosine_basic_cases() {
        let s = tempered_cosine_matrix(array![[1.0, 0.0]].view(), array![[1.0, 0.0]].view(), 1.0).unwrap();
        assert_abs_diff_eq!(s[[0, 0]], 1.0, epsilon = 1e-15);
        let s = tempered_cosine_matrix(array![[1.0, 0.0]].view(), array![[0.0, 1.0]].view(), 0.3).unwrap();
        assert_abs_diff_eq!(s[[0, 0]], 0.0, epsilon = 1e-15);
        let s = tempered_cosine_matrix(array![[1.0, 0.0]].view(), array![[1.0, 1.0]].view(), 0.5).unwrap();
        assert_abs_diff_eq!(s[[0, 0]], std::f64::consts::SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn cosine_errors() {
        let err = tempered_cosine_matrix(array![[1.0, 0.0], [0.0, 0.0]].view(), array![[1.0, 0.0]].view(), 1.0)
            .unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
        assert!(matches!(
            tempered_cosine_matrix(array![[1.0]].view(), array![[1.0]].view(), 0.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn softmax_examples() {
        let full = Mask::from_elem((1, 3), true);
        let r = masked_log_softmax(array![[0.0, 0.0, 0.0]].view(), full.view()).unwrap();
        for &lp in r.log_p.iter() {
            assert_abs_diff_eq!(lp, (1.0f64 / 3.0).ln(), epsilon = 1e-15);
        }

        let mask = array![[true, true, false]];
        let r = masked_log_softmax(array![[0.7, 0.7, 0.7]].view(), mask.view()).unwrap();
        assert_eq!(r.sigma.row(0).to_vec(), vec![0.5, 0.5, 0.0]);
        assert_eq!(r.log_p[[0, 2]], f64::NEG_INFINITY);

        let r = masked_log_softmax(array![[1.0, 2.0, 3.0]].view(), full.view()).unwrap();
        let expected = [0.09003057317038046, 0.24472847105479764, 0.6652409557748219];
        for (s, e) in r.sigma.iter().zip(expected) {
            assert_abs_diff_eq!(*s, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn softmax_survives_large_logits() {
        let full = Mask::from_elem((1, 2), true);
        let r = masked_log_softmax(array![[1000.0, 999.0]].view(), full.view()).unwrap();
        assert!(r.sigma.iter().all(|s| s.is_finite()));
        assert_abs_diff_eq!(r.sigma.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fully_masked_row_is_rejected() {
        let mask = array![[true, true], [false, false]];
        assert!(matches!(
            masked_log_softmax(Matrix::zeros((2, 2)).view(), mask.view()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn fd_simple_functions() {
        let g = finite_difference_gradient(|x| x[[0, 0]] * x[[0, 0]], &array![[3.0]], 1e-5).unwrap();
        assert_abs_diff_eq!(g[[0, 0]], 6.0, epsilon = 1e-6);
        let g = finite_difference_gradient(|_| 4.2, &Matrix::ones((2, 3)), 1e-5).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        let err = finite_difference_gradient(|x| x[[0, 0]].ln(), &array![[0.0]], 1e-5).unwrap_err();
        assert!(matches!(err, Error::Oracle(_)));
    }

    #[test]
    fn fd_quadratic_form() {
        let m = array![[2.0, -1.0, 0.5], [0.3, 1.0, 0.0], [-0.7, 0.2, 3.0]];
        let x = array![[0.4], [-1.3], [0.9]];
        let g = finite_difference_gradient(|v| v.t().dot(&m).dot(v)[[0, 0]], &x, 1e-5).unwrap();
        let exact = (&m + &m.t()).dot(&x);
        for (a, b) in g.iter().zip(exact.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn cosine_backward_matches_fd() {
        let a = array![[0.3, -1.2, 0.8], [1.1, 0.4, -0.5]];
        let b = array![[-0.2, 0.9, 1.4], [0.7, 0.1, 0.3], [1.0, -1.0, 0.2]];
        let g = array![[0.5, -1.0, 0.25], [2.0, 0.1, -0.3]];
        let tau = 0.5;
        let (da, db) = tempered_cosine_backward(a.view(), b.view(), tau, g.view()).unwrap();
        let f_a = |x: &Matrix| (tempered_cosine_matrix(x.view(), b.view(), tau).unwrap() * &g).sum();
        let f_b = |x: &Matrix| (tempered_cosine_matrix(a.view(), x.view(), tau).unwrap() * &g).sum();
        let fa = finite_difference_gradient(f_a, &a, 1e-6).unwrap();
        let fb = finite_difference_gradient(f_b, &b, 1e-6).unwrap();
        for (x, y) in da.iter().zip(fa.iter()).chain(db.iter().zip(fb.iter())) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-8);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
            proptest::collection::vec(-3.0f64..3.0, rows * cols)
                .prop_filter("non-degenerate rows", move |v| {
                    v.chunks(cols).all(|r| r.iter().map(|x| x * x).sum::<f64>() > 1e-3)
                })
                .prop_map(move |v| Matrix::from_shape_vec((rows, cols), v).unwrap())
        }

        proptest! {
            #[test]
            fn cosine_scale_invariant(a in matrix(3, 4), b in matrix(5, 4), c in 0.01f64..100.0, tau in 0.05f64..2.0) {
                let s1 = tempered_cosine_matrix(a.view(), b.view(), tau).unwrap();
                let s2 = tempered_cosine_matrix((&a * c).view(), b.view(), tau).unwrap();
                for (x, y) in s1.iter().zip(s2.iter()) {
                    prop_assert!((x - y).abs() < 1e-12);
                    prop_assert!(x.abs() <= 1.0 / tau + 1e-12);
                }
            }

            #[test]
            fn softmax_rows_are_stochastic(
                logits in proptest::collection::vec(-50.0f64..50.0, 24),
                bits in proptest::collection::vec(any::<bool>(), 24),
            ) {
                let logits = Matrix::from_shape_vec((4, 6), logits).unwrap();
                let mut mask = Mask::from_shape_vec((4, 6), bits).unwrap();
                for i in 0..4 { mask[[i, i]] = true; }
                let r = masked_log_softmax(logits.view(), mask.view()).unwrap();
                for i in 0..4 {
                    let total: f64 = r.sigma.row(i).sum();
                    prop_assert!((total - 1.0).abs() < 1e-9);
                    for j in 0..6 {
                        if mask[[i, j]] {
                            prop_assert!((r.sigma[[i, j]] - r.log_p[[i, j]].exp()).abs() < 1e-13);
                        } else {
                            prop_assert_eq!(r.sigma[[i, j]], 0.0);
                        }
                    }
                }
            }
        }
    }
}
