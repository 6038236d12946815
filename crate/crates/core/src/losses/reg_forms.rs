//! Two independent evaluations of the regularized multi-label loss, used as
//! oracles for the engine.
//!
//! [`matrix_form`] follows the batched tensor procedure: instances and
//! prototypes are stacked into `Z' = [Z; C]` with labels `Y' = [Y; I]`, weights
//! come from a label-wise outer product, and every row of `Z'` is scored at
//! once. [`direct_form`] loops over anchors, labels and positives exactly as
//! the per-anchor sum is written. Neither shares code with the engine beyond
//! the cosine.

use ndarray::{concatenate, Array3, Axis};

use crate::data::{overlap_ratio, positive_sets, ContrastiveBatch, LabelMatrix};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::numerics::{tempered_cosine_matrix, Matrix};

/// Host and regularizer parts of the batch loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegFormValue {
    pub host: f64,
    pub reg: f64,
}

impl RegFormValue {
    pub fn total(&self) -> f64 {
        self.host + self.reg
    }
}

fn pair_weight(cfg: &LossConfig, anchor: &[usize], other: &[usize]) -> f64 {
    if cfg.use_alpha_weighting {
        overlap_ratio(anchor, other, cfg.alpha).unwrap_or(0.0)
    } else {
        1.0
    }
}

fn stacked(batch: &ContrastiveBatch) -> Result<(Matrix, LabelMatrix)> {
    let c = batch
        .prototypes()
        .ok_or_else(|| Error::config("regularized loss requires label prototypes"))?;
    let l = batch.num_labels();
    let z = concatenate(Axis(0), &[batch.embeddings().view(), c.view()]).expect("same width");
    let mut rows = batch.labels().rows().to_vec();
    rows.extend((0..l).map(|j| vec![j]));
    Ok((z, LabelMatrix::new(l, rows)?))
}

/// Batched evaluation over `Z' = [Z; C]`. Only instance rows are summed.
pub fn matrix_form(batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<RegFormValue> {
    let (z, y) = stacked(batch)?;
    let (m, l, n) = (z.nrows(), batch.num_labels(), batch.len());
    let sim = tempered_cosine_matrix(z.view(), z.view(), cfg.tau)?;
    let yd = y.dense();

    // mask_and[a, b, c] = f(y_a, y_b) · y_ac · y_bc, zero on a = b.
    let mut mask_and = Array3::<f64>::zeros((m, m, l));
    for a in 0..m {
        for b in (0..m).filter(|&b| b != a) {
            let f = pair_weight(cfg, y.row(a), y.row(b));
            for c in 0..l {
                mask_and[[a, b, c]] = f * yd[[a, c]] * yd[[b, c]];
            }
        }
    }
    let norm = mask_and.sum_axis(Axis(1));
    let mut lambda = Matrix::zeros((m, m));
    for ((a, b, c), &v) in mask_and.indexed_iter() {
        lambda[[a, b]] += v / (norm[[a, c]] + cfg.epsilon);
    }
    let label_counts = yd.sum_axis(Axis(1));
    let big_lambda = &lambda / &label_counts.insert_axis(Axis(1));

    // Row softmax with the diagonal masked out.
    let mut log_p = Matrix::zeros((m, m));
    let mut sigma = Matrix::zeros((m, m));
    for a in 0..m {
        let top = (0..m).filter(|&b| b != a).map(|b| sim[[a, b]]).fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = (0..m).filter(|&b| b != a).map(|b| (sim[[a, b]] - top).exp()).sum();
        let lse = top + total.ln();
        for b in (0..m).filter(|&b| b != a) {
            log_p[[a, b]] = sim[[a, b]] - lse;
            sigma[[a, b]] = (sim[[a, b]] - lse).exp();
        }
    }

    let mut host = 0.0;
    let mut reg = 0.0;
    for a in 0..n {
        for b in 0..m {
            let lam = big_lambda[[a, b]];
            if lam == 0.0 {
                continue;
            }
            host -= log_p[[a, b]] * lam;
            reg -= (sigma[[a, b]] - lam).max(0.0) * sim[[a, b]];
        }
    }
    Ok(RegFormValue {
        host: host / n as f64,
        reg: if cfg.use_regularizer { reg / n as f64 } else { 0.0 },
    })
}

/// Per-anchor summation: `(1/n) Σ_i [-(1/|y_i|) Σ_{j ∈ y_i} (1/N(j,i)) Σ_{l ∈ P(j,i) ∪ {c_j}} f_l log σ_il + ℓ_reg(i)]`.
pub fn direct_form(batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<RegFormValue> {
    let c = batch
        .prototypes()
        .ok_or_else(|| Error::config("regularized loss requires label prototypes"))?;
    let (n, l) = (batch.len(), batch.num_labels());
    let z = batch.embeddings();
    let zz = tempered_cosine_matrix(z.view(), z.view(), cfg.tau)?;
    let zc = tempered_cosine_matrix(z.view(), c.view(), cfg.tau)?;
    let labels = batch.labels();
    let sets = positive_sets(labels);

    let mut host = 0.0;
    let mut reg = 0.0;
    for i in 0..n {
        // Score of candidate k: instances 0..n, prototype j at n + j.
        let score = |k: usize| if k < n { zz[[i, k]] } else { zc[[i, k - n]] };
        let denom: f64 = (0..n + l).filter(|&k| k != i).map(|k| score(k).exp()).sum();
        let log_sigma = |k: usize| score(k) - denom.ln();

        let yi = labels.row(i);
        let mut weights = vec![0.0; n + l];
        let mut anchor = 0.0;
        for &j in yi {
            let mut members: Vec<(usize, f64)> = sets
                .get(j, i)
                .into_iter()
                .map(|k| (k, pair_weight(cfg, yi, labels.row(k))))
                .collect();
            members.push((n + j, 1.0));
            let nji: f64 = members.iter().map(|&(_, f)| f).sum();
            let mut inner = 0.0;
            for &(k, f) in &members {
                inner += f * log_sigma(k);
                weights[k] += f / nji / yi.len() as f64;
            }
            anchor += inner / nji;
        }
        host -= anchor / yi.len() as f64;

        let total_weight: f64 = weights.iter().sum();
        for (k, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                let gate = log_sigma(k).exp() - w / total_weight;
                reg -= gate.max(0.0) * score(k);
            }
        }
    }
    Ok(RegFormValue {
        host: host / n as f64,
        reg: if cfg.use_regularizer { reg / n as f64 } else { 0.0 },
    })
}
