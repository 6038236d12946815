use ndarray::Array2;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Binary `n × L` label matrix stored as one sorted label-index list per instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    num_labels: usize,
    rows: Vec<Vec<usize>>,
}

impl LabelMatrix {
    /// Builds the matrix from per-instance label indices. Indices are sorted
    /// and deduplicated; any index `>= num_labels` is rejected.
    pub fn new(num_labels: usize, rows: Vec<Vec<usize>>) -> Result<Self> {
        let mut rows = rows;
        for (i, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            if let Some(&bad) = row.iter().find(|&&j| j >= num_labels) {
                return Err(Error::domain(format!(
                    "instance {i} has label index {bad} but only {num_labels} labels exist"
                )));
            }
        }
        Ok(Self { num_labels, rows })
    }

    /// From a dense 0/1 matrix (any nonzero entry counts as set).
    pub fn from_dense(dense: &Array2<f64>) -> Self {
        let rows = dense
            .rows()
            .into_iter()
            .map(|r| r.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(j, _)| j).collect())
            .collect();
        Self {
            num_labels: dense.ncols(),
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    /// Sorted label indices of instance `i`.
    pub fn row(&self, i: usize) -> &[usize] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn has(&self, i: usize, label: usize) -> bool {
        self.rows[i].binary_search(&label).is_ok()
    }

    /// Dense `n × L` 0/1 matrix.
    pub fn dense(&self) -> Matrix {
        let mut out = Matrix::zeros((self.len(), self.num_labels));
        for (i, row) in self.rows.iter().enumerate() {
            for &j in row {
                out[[i, j]] = 1.0;
            }
        }
        out
    }

    /// Dense `n × L` boolean matrix.
    pub fn mask(&self) -> Array2<bool> {
        let mut out = Array2::from_elem((self.len(), self.num_labels), false);
        for (i, row) in self.rows.iter().enumerate() {
            for &j in row {
                out[[i, j]] = true;
            }
        }
        out
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            num_labels: self.num_labels,
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Fails if any instance carries no label.
    pub fn require_nonempty_rows(&self) -> Result<()> {
        match self.rows.iter().position(|r| r.is_empty()) {
            Some(i) => Err(Error::domain(format!(
                "instance {i} has no labels; instances with zero labels rejected"
            ))),
            None => Ok(()),
        }
    }
}

/// `|a ∩ b|` for two sorted index lists.
pub fn intersection_size(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// Jaccard similarity `|a ∩ b| / |a ∪ b|` of two sorted label sets.
pub fn jaccard(a: &[usize], b: &[usize]) -> Result<f64> {
    let inter = intersection_size(a, b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        return Err(Error::domain("jaccard similarity of two empty label sets is undefined"));
    }
    Ok(inter as f64 / union as f64)
}

/// Label-overlap weight `(|a ∩ b| / |b|)^alpha`.
pub fn overlap_ratio(a: &[usize], b: &[usize], alpha: f64) -> Result<f64> {
    if b.is_empty() {
        return Err(Error::domain("overlap ratio against an empty label set is undefined"));
    }
    if !(alpha >= 0.0) {
        return Err(Error::config(format!("alpha must be non-negative, got {alpha}")));
    }
    let ratio = intersection_size(a, b) as f64 / b.len() as f64;
    Ok(ratio.powf(alpha))
}

/// Per-anchor positive structure: for every anchor `i` and every label
/// `j ∈ Δ(i)`, the set `P(j, i)` of other instances carrying `j`.
///
/// Only labels of the anchor are part of the structure; asking for a label the
/// anchor does not carry yields the empty set.
#[derive(Debug, Clone)]
pub struct PositiveSets {
    members: Vec<Vec<usize>>,
    labels: LabelMatrix,
}

impl PositiveSets {
    /// `P(label, anchor)`, ascending.
    pub fn get(&self, label: usize, anchor: usize) -> Vec<usize> {
        if !self.labels.has(anchor, label) {
            return Vec::new();
        }
        self.members[label].iter().copied().filter(|&k| k != anchor).collect()
    }

    /// `|P(label, anchor)|` without allocating.
    pub fn count(&self, label: usize, anchor: usize) -> usize {
        if !self.labels.has(anchor, label) {
            return 0;
        }
        self.members[label].len() - 1
    }

    /// `Δ(anchor)`.
    pub fn anchor_labels(&self, anchor: usize) -> &[usize] {
        self.labels.row(anchor)
    }

    /// All instances carrying `label`.
    pub fn members(&self, label: usize) -> &[usize] {
        &self.members[label]
    }
}

/// Groups instances by label so that `P(j, i) = {k ≠ i : y_k^j = 1}` can be read off.
pub fn positive_sets(labels: &LabelMatrix) -> PositiveSets {
    let mut members = vec![Vec::new(); labels.num_labels()];
    for (i, row) in labels.rows().iter().enumerate() {
        for &j in row {
            members[j].push(i);
        }
    }
    PositiveSets {
        members,
        labels: labels.clone(),
    }
}
