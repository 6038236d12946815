//! Prediction metrics (micro/macro F1, Hamming loss, mAP) and representation
//! metrics (alignment, uniformity).
//!
//! Macro-F1 convention: a label with TP = FP = FN = 0 scores F1 = 0, so labels
//! absent from the evaluation split pull the average down rather than being
//! dropped.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::data::LabelMatrix;
use crate::error::{Error, Result};
use crate::numerics::{Mask, Matrix};

fn check(pred: ArrayView2<bool>, truth: ArrayView2<bool>) -> Result<()> {
    if pred.dim() != truth.dim() {
        return Err(Error::Shape {
            expected: truth.dim(),
            actual: pred.dim(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Counts {
    fn add(&mut self, p: bool, t: bool) {
        match (p, t) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => {}
        }
    }

    fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

/// `2TP / (2TP + FP + FN)` pooled over all cells; 0 when nothing is positive.
pub fn micro_f1(pred: ArrayView2<bool>, truth: ArrayView2<bool>) -> Result<f64> {
    check(pred, truth)?;
    let mut c = Counts::default();
    for (&p, &t) in pred.iter().zip(truth.iter()) {
        c.add(p, t);
    }
    Ok(c.f1())
}

/// Per-label F1 scores.
pub fn per_label_f1(pred: ArrayView2<bool>, truth: ArrayView2<bool>) -> Result<Vec<f64>> {
    check(pred, truth)?;
    Ok((0..truth.ncols())
        .map(|j| {
            let mut c = Counts::default();
            for (&p, &t) in pred.column(j).iter().zip(truth.column(j).iter()) {
                c.add(p, t);
            }
            c.f1()
        })
        .collect())
}

/// Per-label F1 averaged uniformly over all labels.
pub fn macro_f1(pred: ArrayView2<bool>, truth: ArrayView2<bool>) -> Result<f64> {
    let f = per_label_f1(pred, truth)?;
    if f.is_empty() {
        return Ok(0.0);
    }
    Ok(f.iter().sum::<f64>() / f.len() as f64)
}

/// Fraction of mismatched cells.
pub fn hamming(pred: ArrayView2<bool>, truth: ArrayView2<bool>) -> Result<f64> {
    check(pred, truth)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let wrong = pred.iter().zip(truth.iter()).filter(|(p, t)| p != t).count();
    Ok(wrong as f64 / pred.len() as f64)
}

/// Average precision of one ranking: instances sorted by descending score,
/// ties broken by ascending index. `None` when there is no positive.
pub fn average_precision(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let positives = truth.iter().filter(|&&t| t).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if truth[i] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(total / positives as f64)
}

/// Label-wise AP over instance rankings, averaged over labels with at least
/// one positive. `None` when no label has a positive.
pub fn mean_average_precision(scores: ArrayView2<f64>, truth: ArrayView2<bool>) -> Result<Option<f64>> {
    if scores.dim() != truth.dim() {
        return Err(Error::Shape {
            expected: truth.dim(),
            actual: scores.dim(),
        });
    }
    if scores.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("mean average precision needs finite scores"));
    }
    let aps: Vec<f64> = (0..truth.ncols())
        .filter_map(|j| average_precision(&scores.column(j).to_vec(), &truth.column(j).to_vec()))
        .collect();
    if aps.is_empty() {
        return Ok(None);
    }
    Ok(Some(aps.iter().sum::<f64>() / aps.len() as f64))
}

fn unit_rows(features: ArrayView2<f64>) -> Result<Matrix> {
    let norms = crate::numerics::row_norms(features)?;
    Ok(&features / &norms.insert_axis(ndarray::Axis(1)))
}

fn squared_distance(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean `‖f_i - f_j‖²` over unordered pairs with exactly equal label sets,
/// on unit-normalized features. `None` when no such pair exists.
pub fn alignment(features: ArrayView2<f64>, labels: &LabelMatrix) -> Result<Option<f64>> {
    if features.nrows() != labels.len() {
        return Err(Error::Shape {
            expected: (labels.len(), features.ncols()),
            actual: features.dim(),
        });
    }
    let f = unit_rows(features)?;
    // Group by label set so only matching pairs are visited.
    let mut groups: std::collections::BTreeMap<&[usize], Vec<usize>> = std::collections::BTreeMap::new();
    for (i, row) in labels.rows().iter().enumerate() {
        groups.entry(row.as_slice()).or_default().push(i);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for members in groups.values() {
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                total += squared_distance(f.row(i), f.row(j));
                count += 1;
            }
        }
    }
    Ok((count > 0).then(|| total / count as f64))
}

/// `log mean exp(-2‖f_i - f_j‖²)` over unordered distinct pairs, on
/// unit-normalized features; lies in `[-8, 0]`.
pub fn uniformity(features: ArrayView2<f64>) -> Result<f64> {
    let n = features.nrows();
    if n < 2 {
        return Err(Error::domain("uniformity needs at least two instances"));
    }
    let f = unit_rows(features)?;
    let mut exps = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            exps.push(-2.0 * squared_distance(f.row(i), f.row(j)));
        }
    }
    // log-mean-exp with max subtraction
    let top = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = exps.iter().map(|x| (x - top).exp()).sum::<f64>() / exps.len() as f64;
    Ok((top + mean.ln()).clamp(-8.0, 0.0))
}

/// Evaluation summary; field names are stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub hamming_x1000: f64,
    pub map: Option<f64>,
    pub align: Option<f64>,
    pub uniform: Option<f64>,
    pub prr: Option<f64>,
}

impl MetricsReport {
    /// Metrics of thresholded predictions, ranking scores and (optionally) features.
    pub fn compute(
        pred: &Mask,
        scores: &Matrix,
        truth: &LabelMatrix,
        features: Option<ArrayView2<f64>>,
        prr: Option<f64>,
    ) -> Result<Self> {
        let t = truth.mask();
        let (align, uniform) = match features {
            Some(f) => (alignment(f, truth)?, uniformity(f).ok()),
            None => (None, None),
        };
        Ok(Self {
            micro_f1: micro_f1(pred.view(), t.view())?,
            macro_f1: macro_f1(pred.view(), t.view())?,
            hamming_x1000: hamming(pred.view(), t.view())? * 1000.0,
            map: mean_average_precision(scores.view(), t.view())?,
            align,
            uniform,
            prr,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }
}
