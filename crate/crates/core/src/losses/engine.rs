//! Generalized contrastive engine.
//!
//! Every contrastive loss in the crate is one [`PairStructure`] fed to
//! [`contrastive_engine`]. For anchor `i` the per-anchor term is
//!
//! ```text
//! ℓ(i) = -(1 / norm_i) Σ_{k ∈ P(i)} λ_ik · (s_ik - log Σ_{k' ∈ A(i)} g_k' exp(s_ik'))
//! ```
//!
//! with `s` the tempered cosine between anchor `i` and candidate `k`
//! (candidates are the batch instances followed by the prototypes), `g` a
//! per-candidate denominator multiplier, and the batch loss `Σ_i scale_i ℓ(i)`.

use ndarray::{s, Array1, Axis};

use crate::data::ContrastiveBatch;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::numerics::{masked_log_softmax, tempered_cosine_backward, tempered_cosine_matrix, Mask, Matrix};

/// Positive/negative structure of one batch under a particular loss.
#[derive(Debug, Clone)]
pub struct PairStructure {
    /// Number of instance columns; prototype `j` is candidate column `instances + j`.
    pub instances: usize,
    /// Number of prototype columns (0 when the loss ignores prototypes).
    pub prototypes: usize,
    /// `P(i)`: candidate columns, ascending.
    pub positives: Vec<Vec<usize>>,
    /// `λ_k^i`, aligned with `positives`.
    pub weights: Vec<Vec<f64>>,
    /// `A(i)`: which candidates enter the softmax denominator.
    pub denominator: Mask,
    /// `g_k`: multiplier of each candidate inside the denominator.
    pub column_scale: Array1<f64>,
    /// `norm_i`: divides the weighted log-likelihood of anchor `i`.
    pub norm: Vec<f64>,
    /// Outer weight of anchor `i` in the batch loss.
    pub scale: Vec<f64>,
    /// Softmax scores `σ_{k,i}`, filled in by the engine. Constant for gradients.
    pub sigma: Option<Matrix>,
}

impl PairStructure {
    pub fn anchors(&self) -> usize {
        self.positives.len()
    }

    pub fn candidates(&self) -> usize {
        self.instances + self.prototypes
    }

    /// `Λ_k^i = λ_k^i / Σ_p λ_p^i`.
    pub fn normalized_weights(&self, anchor: usize) -> Vec<f64> {
        let w = &self.weights[anchor];
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            w.iter().map(|x| x / total).collect()
        } else {
            vec![0.0; w.len()]
        }
    }

    /// `N(i) = A(i) \ P(i)`: the negatives of anchor `i`.
    pub fn negatives(&self, anchor: usize) -> Vec<usize> {
        let pos = &self.positives[anchor];
        (0..self.candidates())
            .filter(|&k| self.denominator[[anchor, k]] && self.column_scale[k] > 0.0 && pos.binary_search(&k).is_err())
            .collect()
    }

    /// Anchor contributes to the loss (has positives with positive total weight).
    pub fn is_active(&self, anchor: usize) -> bool {
        self.weights[anchor].iter().sum::<f64>() > 0.0
    }

    pub(crate) fn empty(instances: usize, prototypes: usize) -> Self {
        let m = instances + prototypes;
        Self {
            instances,
            prototypes,
            positives: vec![Vec::new(); instances],
            weights: vec![Vec::new(); instances],
            denominator: Mask::from_elem((instances, m), false),
            column_scale: Array1::ones(m),
            norm: vec![1.0; instances],
            scale: vec![1.0; instances],
            sigma: None,
        }
    }
}

/// Gate bookkeeping for one (anchor, positive) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateRecord {
    pub anchor: usize,
    /// Candidate column (instance index, or `instances + label` for a prototype).
    pub candidate: usize,
    /// `Λ_k^i`.
    pub lambda: f64,
    /// `σ_{k,i}`.
    pub sigma: f64,
    /// `-Λ_k^i + σ_{k,i}`; positive means the pair is pushed apart.
    pub gate: f64,
    /// `∂ℓ(i)/∂s_ik` of the full per-anchor objective (host plus regularizer when enabled).
    pub combined: f64,
}

/// Loss value plus gradients with respect to embeddings and prototypes.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    /// Total loss (host plus regularizer).
    pub loss_value: f64,
    /// Host loss alone.
    pub host_value: f64,
    /// Regularizer contribution (0 when disabled).
    pub reg_value: f64,
    /// `∂L/∂Z`, including the regularizer.
    pub dz: Matrix,
    /// `∂L/∂C` (L × d); zero when prototypes are unused.
    pub dc: Matrix,
    /// Regularizer part of `dz`.
    pub reg_dz: Matrix,
    /// Regularizer part of `dc`.
    pub reg_dc: Matrix,
    /// One record per positive pair of every active anchor.
    pub gates: Vec<GateRecord>,
    /// The pair structure with `sigma` filled in.
    pub pairs: PairStructure,
}

impl GradientBundle {
    /// Zero loss and gradients for a batch where no anchor has a positive.
    fn zero(batch: &ContrastiveBatch, pairs: PairStructure) -> Self {
        let (n, d, l) = (batch.len(), batch.dim(), batch.num_labels());
        Self {
            loss_value: 0.0,
            host_value: 0.0,
            reg_value: 0.0,
            dz: Matrix::zeros((n, d)),
            dc: Matrix::zeros((l, d)),
            reg_dz: Matrix::zeros((n, d)),
            reg_dc: Matrix::zeros((l, d)),
            gates: Vec::new(),
            pairs,
        }
    }
}

/// Candidate matrix `[Z; C]` (or just `Z` when the structure ignores prototypes).
fn candidate_matrix(batch: &ContrastiveBatch, pairs: &PairStructure) -> Result<Matrix> {
    if pairs.instances != batch.len() {
        return Err(Error::Shape {
            expected: (batch.len(), batch.dim()),
            actual: (pairs.instances, batch.dim()),
        });
    }
    if pairs.prototypes == 0 {
        return Ok(batch.embeddings().clone());
    }
    let c = batch
        .prototypes()
        .ok_or_else(|| Error::config("loss requires label prototypes but the batch has none"))?;
    if c.nrows() != pairs.prototypes {
        return Err(Error::Shape {
            expected: (pairs.prototypes, batch.dim()),
            actual: c.dim(),
        });
    }
    Ok(ndarray::concatenate(Axis(0), &[batch.embeddings().view(), c.view()]).expect("same width"))
}

/// Splits a candidate-side gradient back into instance and prototype parts and
/// adds the anchor-side gradient.
fn backprop(
    batch: &ContrastiveBatch,
    candidates: &Matrix,
    tau: f64,
    grad_s: &Matrix,
    instances: usize,
) -> Result<(Matrix, Matrix)> {
    let (da, dk) = tempered_cosine_backward(batch.embeddings().view(), candidates.view(), tau, grad_s.view())?;
    let dz = da + &dk.slice(s![..instances, ..]);
    let mut dc = Matrix::zeros((batch.num_labels(), batch.dim()));
    if dk.nrows() > instances {
        dc.assign(&dk.slice(s![instances.., ..]));
    }
    Ok((dz, dc))
}

/// Value and gradient contribution of the gradient regularizer
/// `ℓ_reg(i) = -Σ_{k ∈ P(i)} max(0, -Λ_k^i + σ_{k,i}) s_ik`, with `σ` and `Λ`
/// held constant.
#[derive(Debug, Clone)]
pub struct RegTerm {
    pub value: f64,
    /// `∂L_reg/∂s` (anchors × candidates).
    pub grad_s: Matrix,
    pub dz: Matrix,
    pub dc: Matrix,
}

/// Regularizer for a pair structure whose `sigma` is already known.
pub fn reg_term(batch: &ContrastiveBatch, pairs: &PairStructure, cfg: &LossConfig) -> Result<RegTerm> {
    let sigma = pairs
        .sigma
        .as_ref()
        .ok_or_else(|| Error::config("regularizer needs the softmax scores of the host loss"))?;
    let candidates = candidate_matrix(batch, pairs)?;
    let sim = tempered_cosine_matrix(batch.embeddings().view(), candidates.view(), cfg.tau)?;
    let mut grad_s = Matrix::zeros(sim.dim());
    let mut value = 0.0;
    for i in 0..pairs.anchors() {
        if !pairs.is_active(i) {
            continue;
        }
        let lambda = pairs.normalized_weights(i);
        let mut anchor_value = 0.0;
        for (&k, &lam) in pairs.positives[i].iter().zip(&lambda) {
            let coeff = (sigma[[i, k]] - lam).max(0.0);
            if coeff > 0.0 {
                anchor_value -= coeff * sim[[i, k]];
                grad_s[[i, k]] -= pairs.scale[i] * coeff;
            }
        }
        value += pairs.scale[i] * anchor_value;
    }
    let (dz, dc) = backprop(batch, &candidates, cfg.tau, &grad_s, pairs.instances)?;
    Ok(RegTerm {
        value,
        grad_s,
        dz,
        dc,
    })
}

/// Evaluates the generalized contrastive loss described by `pairs` on `batch`.
///
/// Anchors without positives are skipped (zero loss and gradient) unless
/// `cfg.strict` is set, in which case they are an error.
pub fn contrastive_engine(batch: &ContrastiveBatch, mut pairs: PairStructure, cfg: &LossConfig) -> Result<GradientBundle> {
    cfg.validate()?;
    let n = pairs.anchors();
    if cfg.strict {
        if let Some(i) = (0..n).find(|&i| !pairs.is_active(i)) {
            return Err(Error::domain(format!("anchor {i} has no positive pair (strict mode)")));
        }
    }
    if !(0..n).any(|i| pairs.is_active(i)) {
        return Ok(GradientBundle::zero(batch, pairs));
    }

    let candidates = candidate_matrix(batch, &pairs)?;
    let sim = tempered_cosine_matrix(batch.embeddings().view(), candidates.view(), cfg.tau)?;
    let mut mask = pairs.denominator.clone();
    let mut logits = sim.clone();
    for ((i, k), keep) in mask.indexed_iter_mut() {
        let g = pairs.column_scale[k];
        if g > 0.0 {
            logits[[i, k]] += g.ln();
        } else {
            *keep = false;
        }
    }
    // Inactive anchors may have an empty denominator; give them a dummy column.
    for i in 0..n {
        if !pairs.is_active(i) && !mask.row(i).iter().any(|&b| b) {
            mask[[i, 0]] = true;
        }
    }
    let softmax = masked_log_softmax(logits.view(), mask.view())?;
    let sigma = &softmax.sigma;

    let mut grad_s = Matrix::zeros(sim.dim());
    let mut host_value = 0.0;
    let mut gates = Vec::new();
    for i in 0..n {
        if !pairs.is_active(i) {
            continue;
        }
        let total: f64 = pairs.weights[i].iter().sum();
        let ratio = total / pairs.norm[i];
        let scale = pairs.scale[i];
        let lse = softmax.log_normalizer[i];
        let mut ll = 0.0;
        for (&k, &w) in pairs.positives[i].iter().zip(&pairs.weights[i]) {
            ll += w * (sim[[i, k]] - lse);
        }
        host_value -= scale * ll / pairs.norm[i];

        for k in 0..sim.ncols() {
            if mask[[i, k]] {
                grad_s[[i, k]] = scale * ratio * sigma[[i, k]];
            }
        }
        let lambda = pairs.normalized_weights(i);
        for (&k, &lam) in pairs.positives[i].iter().zip(&lambda) {
            let gate = -lam + sigma[[i, k]];
            grad_s[[i, k]] = scale * ratio * gate;
            let combined = if cfg.use_regularizer {
                ratio * gate - gate.max(0.0)
            } else {
                ratio * gate
            };
            gates.push(GateRecord {
                anchor: i,
                candidate: k,
                lambda: lam,
                sigma: sigma[[i, k]],
                gate,
                combined,
            });
        }
    }
    let (mut dz, mut dc) = backprop(batch, &candidates, cfg.tau, &grad_s, pairs.instances)?;
    pairs.sigma = Some(softmax.sigma);

    let (reg_value, reg_dz, reg_dc) = if cfg.use_regularizer {
        let reg = reg_term(batch, &pairs, cfg)?;
        dz += &reg.dz;
        dc += &reg.dc;
        (reg.value, reg.dz, reg.dc)
    } else {
        (0.0, Matrix::zeros(dz.dim()), Matrix::zeros(dc.dim()))
    };

    Ok(GradientBundle {
        loss_value: host_value + reg_value,
        host_value,
        reg_value,
        dz,
        dc,
        reg_dz,
        reg_dc,
        gates,
        pairs,
    })
}

/// Which candidates form the softmax denominator of a generalized loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Denominator {
    /// `𝓑 \ {z_i}`.
    Batch,
    /// `𝓑 ∪ C \ {z_i}`.
    BatchAndPrototypes,
}

/// Pair structure of the generalized loss over instance positives: anchor `i`
/// pairs with every other instance `k` for which `weight(y_i, y_k) > 0`, with
/// `λ_k^i = weight(y_i, y_k)`, normalizer `Σ λ` and outer weight `1/n`.
pub fn weighted_instance_pairs<W>(batch: &ContrastiveBatch, weight: W, denominator: Denominator) -> Result<PairStructure>
where
    W: Fn(&[usize], &[usize]) -> f64,
{
    let n = batch.len();
    let protos = match denominator {
        Denominator::Batch => 0,
        Denominator::BatchAndPrototypes => batch
            .prototypes()
            .map(|c| c.nrows())
            .ok_or_else(|| Error::config("denominator includes prototypes but the batch has none"))?,
    };
    let mut pairs = PairStructure::empty(n, protos);
    let labels = batch.labels();
    for i in 0..n {
        for k in 0..n + protos {
            pairs.denominator[[i, k]] = k != i;
        }
        for k in (0..n).filter(|&k| k != i) {
            let w = weight(labels.row(i), labels.row(k));
            if w > 0.0 {
                pairs.positives[i].push(k);
                pairs.weights[i].push(w);
            }
        }
        pairs.norm[i] = pairs.weights[i].iter().sum::<f64>().max(f64::MIN_POSITIVE);
        pairs.scale[i] = 1.0 / n as f64;
    }
    Ok(pairs)
}

/// Generalized contrastive loss over instance positives; see [`weighted_instance_pairs`].
pub fn generalized_contrastive<W>(
    batch: &ContrastiveBatch,
    weight: W,
    denominator: Denominator,
    cfg: &LossConfig,
) -> Result<GradientBundle>
where
    W: Fn(&[usize], &[usize]) -> f64,
{
    contrastive_engine(batch, weighted_instance_pairs(batch, weight, denominator)?, cfg)
}

/// Fraction of positive pairs whose gate `-Λ + σ` is strictly positive.
/// `None` when there are no positive pairs.
pub fn prr(gates: &[GateRecord]) -> Option<f64> {
    if gates.is_empty() {
        return None;
    }
    let open = gates.iter().filter(|g| g.gate > 0.0).count();
    Some(open as f64 / gates.len() as f64)
}
