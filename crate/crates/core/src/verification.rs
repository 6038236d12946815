//! Oracles and invariant drivers: finite-difference gradient checks, the
//! closed-form check of the regularizer, the minimum-condition residual and
//! gate reports.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use qd::Quad;

use crate::data::{ContrastiveBatch, LabelMatrix};
use crate::error::{Error, Result};
use crate::losses::{classic_loss, contrastive_loss, pair_structure, GateRecord, LossConfig, LossId, PairStructure};
use crate::numerics::{row_norms, Matrix};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Floor of the relative-error denominator.
pub const REL_FLOOR: f64 = 1e-8;
/// Tolerance of the closed-form regularizer gradient check.
pub const REG_CLOSED_FORM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub loss: String,
    pub trial: usize,
    /// Batch descriptor.
    pub n: usize,
    pub d: usize,
    pub labels: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(matrix, row, col)` of the entry with the largest relative error;
    /// matrix is `Z`, `C` or `logits`.
    pub worst: (String, usize, usize),
    /// Largest absolute deviation of the regularizer gradient from its closed form.
    pub reg_closed_form_error: Option<f64>,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report is plain data")
    }
}

/// Relative error `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

struct Worst {
    rel: f64,
    abs: f64,
    at: (String, usize, usize),
}

impl Worst {
    fn new() -> Self {
        Self {
            rel: 0.0,
            abs: 0.0,
            at: (String::new(), 0, 0),
        }
    }

    fn update(&mut self, name: &str, analytic: &Matrix, fd: &Matrix) {
        for ((idx, &a), &b) in analytic.indexed_iter().zip(fd.iter()) {
            let rel = relative_error(a, b);
            self.abs = self.abs.max((a - b).abs());
            if rel > self.rel || self.at.0.is_empty() {
                self.rel = rel;
                self.at = (name.to_string(), idx.0, idx.1);
            }
        }
    }
}

fn unit_rows<R: Rng>(rng: &mut R, rows: usize, d: usize) -> Matrix {
    let mut m = Matrix::from_shape_simple_fn((rows, d), || rng.sample(StandardNormal));
    for mut row in m.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    m
}

/// Random batch with unit-norm rows. Multi-label rows include each label with
/// probability ½ (at least one); single-label rows draw one label uniformly.
pub fn random_batch<R: Rng>(rng: &mut R, n: usize, d: usize, l: usize, single_label: bool, prototypes: bool) -> ContrastiveBatch {
    let z = unit_rows(rng, n, d);
    let rows = (0..n)
        .map(|_| {
            if single_label {
                vec![rng.random_range(0..l)]
            } else {
                let mut r: Vec<usize> = (0..l).filter(|_| rng.random_bool(0.5)).collect();
                if r.is_empty() {
                    r.push(rng.random_range(0..l));
                }
                r
            }
        })
        .collect();
    let labels = LabelMatrix::new(l, rows).expect("indices < l");
    let c = prototypes.then(|| unit_rows(rng, l, d));
    ContrastiveBatch::new(z, labels, c).expect("valid by construction")
}

/// Gradient of `Σ_{(i,k)} coeff_ik s_ik` written out pair by pair, with
/// `∂s_ik/∂z_i = (ĉ_k - cos_ik ẑ_i) / (τ |z_i|)` and symmetrically for the candidate.
fn pairwise_closed_form(batch: &ContrastiveBatch, pairs: &PairStructure, coeff: &[(usize, usize, f64)], tau: f64) -> (Matrix, Matrix) {
    let z = batch.embeddings();
    let (n, d) = z.dim();
    let mut dz = Matrix::zeros((n, d));
    let mut dc = Matrix::zeros((batch.num_labels(), d));
    let zn = row_norms(z.view()).expect("validated batch");
    let cand = |k: usize| {
        if k < pairs.instances {
            z.row(k).to_owned()
        } else {
            batch.prototypes().expect("prototype column").row(k - pairs.instances).to_owned()
        }
    };
    for &(i, k, w) in coeff {
        let zi = z.row(i);
        let ck = cand(k);
        let (ni, nk) = (zn[i], ck.dot(&ck).sqrt());
        let cos = zi.dot(&ck) / (ni * nk);
        let grad_i = (&ck / nk - &(&zi * (cos / ni))) * (w / (tau * ni));
        let grad_k = (&zi / ni - &(&ck * (cos / nk))) * (w / (tau * nk));
        let mut row = dz.row_mut(i);
        row += &grad_i;
        if k < pairs.instances {
            let mut row = dz.row_mut(k);
            row += &grad_k;
        } else {
            let mut row = dc.row_mut(k - pairs.instances);
            row += &grad_k;
        }
    }
    (dz, dc)
}

/// Checks the regularizer gradient of `bundle` against the pairwise closed
/// form `-scale_i · max(0, -Λ + σ) · ∂s_ik`; returns the largest absolute deviation.
fn reg_closed_form_error(batch: &ContrastiveBatch, bundle: &crate::losses::GradientBundle, tau: f64) -> f64 {
    let pairs = &bundle.pairs;
    let coeff: Vec<(usize, usize, f64)> = bundle
        .gates
        .iter()
        .filter(|g| g.gate > 0.0)
        .map(|g| (g.anchor, g.candidate, -pairs.scale[g.anchor] * g.gate))
        .collect();
    let (dz, dc) = pairwise_closed_form(batch, pairs, &coeff, tau);
    let ez = (&dz - &bundle.reg_dz).iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let ec = (&dc - &bundle.reg_dc).iter().fold(0.0f64, |m, x| m.max(x.abs()));
    ez.max(ec)
}

fn dd(x: f64) -> Quad {
    Quad::from(x)
}

fn dd_dot(a: &[f64], b: &[f64]) -> Quad {
    a.iter().zip(b).fold(dd(0.0), |acc, (&x, &y)| acc + dd(x) * dd(y))
}

fn dd_max(a: Quad, b: Quad) -> Quad {
    if b > a {
        b
    } else {
        a
    }
}

/// Forward value of the host loss described by `pairs`, evaluated in
/// double-double arithmetic. Independent of the engine: it re-derives every
/// cosine, softmax normalizer and weighted sum from the raw rows.
pub fn extended_value(z: &Matrix, c: Option<&Matrix>, pairs: &PairStructure, tau: f64) -> Quad {
    let column = |k: usize| -> Vec<f64> {
        if k < pairs.instances {
            z.row(k).to_vec()
        } else {
            c.expect("prototype column").row(k - pairs.instances).to_vec()
        }
    };
    let columns: Vec<Vec<f64>> = (0..pairs.candidates()).map(column).collect();
    let norms: Vec<Quad> = columns.iter().map(|v| dd_dot(v, v).sqrt()).collect();
    let tau = dd(tau);
    let mut value = dd(0.0);
    for i in (0..pairs.anchors()).filter(|&i| pairs.is_active(i)) {
        let zi = z.row(i).to_vec();
        let zi_norm = dd_dot(&zi, &zi).sqrt();
        let score = |k: usize| dd_dot(&zi, &columns[k]) / (zi_norm * norms[k] * tau);
        let logits: Vec<Quad> = (0..pairs.candidates())
            .filter(|&k| pairs.denominator[[i, k]] && pairs.column_scale[k] > 0.0)
            .map(|k| score(k) + dd(pairs.column_scale[k]).ln())
            .collect();
        let top = logits.iter().fold(logits[0], |m, &x| dd_max(m, x));
        let total = logits.iter().fold(dd(0.0), |acc, &x| acc + x.sub_accurate(top).exp());
        let lse = top + total.ln();
        let ll = pairs.positives[i]
            .iter()
            .zip(&pairs.weights[i])
            .fold(dd(0.0), |acc, (&k, &w)| acc + score(k).sub_accurate(lse) * dd(w));
        value -= ll * dd(pairs.scale[i]) / dd(pairs.norm[i]);
    }
    value
}

/// `x^a` in double-double; `x^0 = 1` and `0^a = 0` for `a > 0`.
fn dd_pow(x: Quad, a: f64) -> Quad {
    if a == 0.0 {
        dd(1.0)
    } else if x <= dd(0.0) {
        dd(0.0)
    } else {
        (x.ln() * dd(a)).exp()
    }
}

/// Forward value of a non-contrastive loss in double-double arithmetic,
/// written from the loss definitions rather than from the engine's stable forms.
pub fn extended_classic_value(id: LossId, logits: &Matrix, labels: &LabelMatrix, cfg: &LossConfig) -> Quad {
    let one = dd(1.0);
    let (n, l) = logits.dim();
    let mut value = dd(0.0);
    match id {
        LossId::Zlpr => {
            for i in 0..n {
                let (mut pos, mut neg) = (one, one);
                for j in 0..l {
                    let x = dd(logits[[i, j]]);
                    if labels.has(i, j) {
                        pos += (-x).exp();
                    } else {
                        neg += x.exp();
                    }
                }
                value += pos.ln() + neg.ln();
            }
            value / dd(n.max(1) as f64)
        }
        _ => {
            let (a, b, m) = match id {
                LossId::Asy => (cfg.gamma_pos, cfg.gamma_neg, cfg.margin),
                _ => (0.0, 0.0, 0.0),
            };
            for ((i, j), &x) in logits.indexed_iter() {
                let p = one / (one + (-dd(x)).exp());
                let s = if m == 0.0 { p } else { dd_max(p.sub_accurate(dd(m)), dd(0.0)) };
                let term = if labels.has(i, j) {
                    dd_pow(one.sub_accurate(s), a) * dd_max(s, dd(1e-8)).ln()
                } else {
                    dd_pow(s, b) * one.sub_accurate(s).ln()
                };
                value -= term;
            }
            value / dd((n * l).max(1) as f64)
        }
    }
}

/// Five-point central differences at step `h` of a double-double valued
/// function: `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`. With round-off
/// pushed below 1e-30 the O(h⁴) truncation term is the only error left; the
/// quotient is rounded to `f64` at the end.
pub fn extended_fd<F: Fn(&Matrix) -> Quad>(f: F, x: &Matrix, h: f64) -> Matrix {
    let mut probe = x.clone();
    let mut grad = Matrix::zeros(x.dim());
    for (idx, g) in grad.indexed_iter_mut() {
        let orig = probe[idx];
        let mut at = |offset: f64| {
            probe[idx] = orig + offset;
            let step = dd(probe[idx]).sub_accurate(dd(orig));
            let value = f(&probe);
            probe[idx] = orig;
            (value, step)
        };
        let (p1, s1) = at(h);
        let (m1, t1) = at(-h);
        let (p2, s2) = at(2.0 * h);
        let (m2, t2) = at(-2.0 * h);
        // Rounding of x ± h makes the realized steps differ slightly from h;
        // use the exact realized step of each pair.
        let d1 = p1.sub_accurate(m1) / s1.sub_accurate(t1);
        let d2 = p2.sub_accurate(m2) / s2.sub_accurate(t2);
        *g = (d1 * dd(4.0)).sub_accurate(d2).0 / 3.0;
    }
    grad
}

/// One gradient check of a contrastive loss on `batch`. The host loss (no
/// regularizer) is compared against central differences; when the loss is
/// regularized, the regularizer gradient is compared against its closed form.
pub fn check_contrastive(id: LossId, batch: &ContrastiveBatch, cfg: &LossConfig, tol: f64) -> Result<GradCheckReport> {
    let host_cfg = LossConfig {
        use_regularizer: false,
        ..cfg.clone()
    };
    let host_id = match id {
        LossId::Reg => LossId::RegNoReg,
        LossId::SupConReg => LossId::SupCon,
        other => other,
    };
    let host = contrastive_loss(host_id, batch, &host_cfg)?;
    let pairs = pair_structure(host_id, batch, &host_cfg)?;
    let c = batch.prototypes().filter(|_| pairs.prototypes > 0);
    let mut worst = Worst::new();
    let fz = extended_fd(|z| extended_value(z, c, &pairs, cfg.tau), batch.embeddings(), FD_STEP);
    worst.update("Z", &host.dz, &fz);
    if let Some(c) = c {
        let fc = extended_fd(|c| extended_value(batch.embeddings(), Some(c), &pairs, cfg.tau), c, FD_STEP);
        worst.update("C", &host.dc, &fc);
    }

    let regularized = id.is_regularized() || (cfg.use_regularizer && !matches!(id, LossId::RegNoReg | LossId::SupCon));
    let reg_err = if regularized {
        let full = contrastive_loss(id, batch, cfg)?;
        Some(reg_closed_form_error(batch, &full, cfg.tau))
    } else {
        None
    };
    let pass = worst.rel < tol && reg_err.is_none_or(|e| e < REG_CLOSED_FORM_TOL);
    Ok(GradCheckReport {
        loss: id.to_string(),
        trial: 0,
        n: batch.len(),
        d: batch.dim(),
        labels: batch.num_labels(),
        max_rel_error: worst.rel,
        max_abs_error: worst.abs,
        worst: worst.at,
        reg_closed_form_error: reg_err,
        pass,
    })
}

fn check_classic<R: Rng>(id: LossId, rng: &mut R, n: usize, l: usize, cfg: &LossConfig, tol: f64) -> Result<GradCheckReport> {
    let labels = random_batch(rng, n, 2, l, false, false).labels().clone();
    // Keep logits away from the asymmetric clip kink.
    let logits = loop {
        let x = Matrix::from_shape_simple_fn((n, l), || rng.random_range(-3.0..3.0));
        let kink_free = cfg.margin == 0.0
            || x.iter().all(|&v| (1.0 / (1.0 + (-v).exp()) - cfg.margin).abs() > 1e-3);
        if kink_free {
            break x;
        }
    };
    let analytic = classic_loss(id, &logits, &labels, cfg)?;
    let fd = extended_fd(|x| extended_classic_value(id, x, &labels, cfg), &logits, FD_STEP);
    let mut worst = Worst::new();
    worst.update("logits", &analytic.grad, &fd);
    Ok(GradCheckReport {
        loss: id.to_string(),
        trial: 0,
        n,
        d: l,
        labels: l,
        max_rel_error: worst.rel,
        max_abs_error: worst.abs,
        worst: worst.at,
        reg_closed_form_error: None,
        pass: worst.rel < tol,
    })
}

/// Runs `trials` gradient checks of loss `id` on random batches with
/// `n ∈ [4, 16]`, `d ∈ [3, 8]`, `L ∈ [2, 6]`. Deterministic in `seed`: trial
/// `t` draws from its own stream `seed ⊕ t`.
pub fn check_gradients(id: LossId, trials: usize, tol: f64, seed: u64, cfg: &LossConfig) -> Result<Vec<GradCheckReport>> {
    let run = |t: usize| -> Result<GradCheckReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        let n = rng.random_range(4..=16);
        let d = rng.random_range(3..=8);
        let l = rng.random_range(2..=6);
        let mut report = if id.is_contrastive() {
            let batch = random_batch(&mut rng, n, d, l, id.is_single_label(), id.uses_prototypes());
            check_contrastive(id, &batch, cfg, tol)?
        } else {
            check_classic(id, &mut rng, n, l, cfg, tol)?
        };
        report.trial = t;
        Ok(report)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..trials).into_par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..trials).map(run).collect()
    }
}

/// `count` unit vectors with identical pairwise cosine `-1/(count-1)`
/// (a regular simplex), randomly rotated into `d ≥ count` dimensions and
/// randomly rescaled per row.
pub fn simplex_rows<R: Rng>(rng: &mut R, count: usize, d: usize) -> Matrix {
    assert!(d >= count && count >= 2);
    let centroid = 1.0 / count as f64;
    let mut m = Matrix::zeros((count, d));
    for i in 0..count {
        for j in 0..count {
            m[[i, j]] = if i == j { 1.0 - centroid } else { -centroid };
        }
    }
    // Random orthogonal matrix by Gram-Schmidt on a Gaussian matrix.
    let mut q = Matrix::from_shape_simple_fn((d, d), || rng.sample(StandardNormal));
    for i in 0..d {
        for j in 0..i {
            let proj = q.row(i).dot(&q.row(j));
            let qj = q.row(j).to_owned();
            q.row_mut(i).scaled_add(-proj, &qj);
        }
        let norm = q.row(i).dot(&q.row(i)).sqrt();
        q.row_mut(i).mapv_inplace(|x| x / norm);
    }
    let mut out = m.dot(&q);
    for mut row in out.rows_mut() {
        let scale: f64 = rng.random_range(0.5..2.0);
        row *= scale;
    }
    out
}

/// A batch at the minimum condition `σ = Λ` on every positive pair: every
/// candidate in each anchor's denominator is a positive with uniform weight
/// and all pairwise cosines are equal. Cycles through three structures by
/// `variant`: single-class SupCon with the regularizer, the regularized
/// multi-label loss with one label and its prototype, and the Jaccard loss on
/// identical label sets with the regularizer switched on.
pub fn minimum_condition_case<R: Rng>(rng: &mut R, variant: usize) -> (LossId, ContrastiveBatch, LossConfig) {
    let n = rng.random_range(2..=8);
    let tau = [0.05, 0.1, 0.5, 1.0][rng.random_range(0..4)];
    let cfg = LossConfig {
        tau,
        use_regularizer: true,
        ..Default::default()
    };
    match variant % 3 {
        0 => {
            let z = simplex_rows(rng, n, n + 2);
            let labels = LabelMatrix::new(3, vec![vec![1]; n]).expect("valid");
            (LossId::SupConReg, ContrastiveBatch::new(z, labels, None).expect("valid"), cfg)
        }
        1 => {
            let rows = simplex_rows(rng, n + 1, n + 2);
            let z = rows.slice(ndarray::s![..n, ..]).to_owned();
            let c = rows.slice(ndarray::s![n.., ..]).to_owned();
            let labels = LabelMatrix::new(1, vec![vec![0]; n]).expect("valid");
            (LossId::Reg, ContrastiveBatch::new(z, labels, Some(c)).expect("valid"), cfg)
        }
        _ => {
            let z = simplex_rows(rng, n, n + 1);
            let labels = LabelMatrix::new(4, vec![vec![0, 2, 3]; n]).expect("valid");
            (LossId::Base, ContrastiveBatch::new(z, labels, None).expect("valid"), cfg)
        }
    }
}

/// Distance from the minimum condition of the contrastive objective:
/// `Σ_{positives} (σ - Λ)² + Σ_{negatives} σ²` over active anchors.
///
/// The negative part is strictly positive whenever a negative exists, since
/// softmax scores never vanish; the residual is a diagnostic, not a target.
pub fn minimum_residual(pairs: &PairStructure) -> Result<f64> {
    let sigma = pairs
        .sigma
        .as_ref()
        .ok_or_else(|| Error::config("pair structure has no softmax scores; evaluate the loss first"))?;
    let mut total = 0.0;
    for i in (0..pairs.anchors()).filter(|&i| pairs.is_active(i)) {
        for (&k, lam) in pairs.positives[i].iter().zip(pairs.normalized_weights(i)) {
            total += (sigma[[i, k]] - lam).powi(2);
        }
        for k in pairs.negatives(i) {
            total += sigma[[i, k]].powi(2);
        }
    }
    Ok(total)
}

/// Per-pair gate values of a loss evaluated on one batch.
#[derive(Debug, Clone, Serialize)]
pub struct GateReport {
    pub loss: String,
    pub tau: f64,
    /// `(anchor, candidate, -Λ + σ)` for every positive pair of every active anchor.
    pub gates: Vec<(usize, usize, f64)>,
    pub prr: Option<f64>,
    /// Largest deviation between the engine's gate and the independent recomputation.
    pub max_gate_error: f64,
    /// Largest deviation of the combined coefficient from `min(0, -Λ + σ)`;
    /// `None` when the regularizer is off.
    pub max_clamp_error: Option<f64>,
}

/// Recomputes softmax scores and gates from scratch and checks them against
/// the engine. With the regularizer on, checks that every positive pair's
/// combined coefficient equals `min(0, -Λ + σ)` (scaled by the anchor's weight
/// mass `Σλ / norm`, which is 1 for every regularized loss with prototypes).
pub fn gate_report(id: LossId, batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<GateReport> {
    let bundle = contrastive_loss(id, batch, cfg)?;
    let pairs = pair_structure(id, batch, cfg)?;
    let regularized = bundle.reg_value != 0.0
        || id.is_regularized()
        || (cfg.use_regularizer && !matches!(id, LossId::RegNoReg | LossId::SupCon));

    let z = batch.embeddings();
    let zn = row_norms(z.view())?;
    let column = |k: usize| -> (Vec<f64>, f64) {
        let v: Vec<f64> = if k < pairs.instances {
            z.row(k).to_vec()
        } else {
            batch.prototypes().expect("prototype column").row(k - pairs.instances).to_vec()
        };
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        (v, norm)
    };
    let mut gates = Vec::new();
    let mut max_gate_error = 0.0f64;
    let mut max_clamp_error: Option<f64> = regularized.then_some(0.0);
    let mut records = bundle.gates.iter();
    for i in (0..pairs.anchors()).filter(|&i| pairs.is_active(i)) {
        let score = |k: usize| {
            let (v, norm) = column(k);
            z.row(i).iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / (zn[i] * norm * cfg.tau)
        };
        let live: Vec<usize> = (0..pairs.candidates())
            .filter(|&k| pairs.denominator[[i, k]] && pairs.column_scale[k] > 0.0)
            .collect();
        let logits: Vec<f64> = live.iter().map(|&k| score(k) + pairs.column_scale[k].ln()).collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logits.iter().map(|x| (x - top).exp()).sum();
        let sigma_of = |k: usize| {
            live.iter()
                .position(|&c| c == k)
                .map_or(0.0, |p| (logits[p] - top).exp() / total)
        };
        let mass: f64 = pairs.weights[i].iter().sum();
        let ratio = mass / pairs.norm[i];
        for (&k, &w) in pairs.positives[i].iter().zip(&pairs.weights[i]) {
            let gate = -w / mass + sigma_of(k);
            let rec: &GateRecord = records
                .next()
                .ok_or_else(|| Error::Oracle("engine recorded fewer gates than positive pairs".into()))?;
            if (rec.anchor, rec.candidate) != (i, k) {
                return Err(Error::Oracle(format!(
                    "gate order mismatch: engine ({}, {}), oracle ({i}, {k})",
                    rec.anchor, rec.candidate
                )));
            }
            max_gate_error = max_gate_error.max((rec.gate - gate).abs());
            if let Some(err) = max_clamp_error.as_mut() {
                let expected = if (ratio - 1.0).abs() < 1e-12 {
                    gate.min(0.0)
                } else {
                    ratio * gate - gate.max(0.0)
                };
                *err = err.max((rec.combined - expected).abs());
            }
            gates.push((i, k, gate));
        }
    }
    let open = gates.iter().filter(|g| g.2 > 0.0).count();
    let prr = (!gates.is_empty()).then(|| open as f64 / gates.len() as f64);
    Ok(GateReport {
        loss: id.to_string(),
        tau: cfg.tau,
        gates,
        prr,
        max_gate_error,
        max_clamp_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_difference_gradient;
    use ndarray::array;

    #[test]
    fn fd_oracle_on_quadratics() {
        // f(X) = Σ a_ij x_ij² has gradient 2 a ⊙ X; central differences are exact up to round-off.
        let a = array![[1.0, -2.0], [0.5, 3.0]];
        let x = array![[0.3, -1.2], [2.0, 0.7]];
        let fd = finite_difference_gradient(|x| (&a * &(x * x)).sum(), &x, FD_STEP).unwrap();
        let exact = 2.0 * &a * &x;
        for (f, e) in fd.iter().zip(exact.iter()) {
            assert!(relative_error(*f, *e) < 1e-8);
        }
    }

    #[test]
    fn zero_tolerance_fails_everything() {
        let reports = check_gradients(LossId::Base, 5, 0.0, 1, &LossConfig::default()).unwrap();
        assert!(reports.iter().all(|r| !r.pass));
    }

    #[test]
    fn reports_are_json_lines() {
        let reports = check_gradients(LossId::Bce, 2, 1e-6, 4, &LossConfig::default()).unwrap();
        for r in &reports {
            let line = r.to_json_line();
            assert!(!line.contains('\n'));
            let back: GradCheckReport = serde_json::from_str(&line).unwrap();
            assert_eq!(back.trial, r.trial);
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = check_gradients(LossId::Reg, 3, 1e-5, 9, &LossConfig::default()).unwrap();
        let b = check_gradients(LossId::Reg, 3, 1e-5, 9, &LossConfig::default()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.max_rel_error.to_bits(), y.max_rel_error.to_bits());
        }
    }

    #[test]
    fn extended_classic_values_match_engine() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let labels = random_batch(&mut rng, 6, 2, 4, false, false).labels().clone();
        let logits = Matrix::from_shape_simple_fn((6, 4), || rng.random_range(-3.0..3.0));
        let clipped = LossConfig { margin: 0.05, gamma_pos: 1.0, gamma_neg: 4.0, ..Default::default() };
        for (id, cfg) in [(LossId::Bce, LossConfig::default()), (LossId::Asy, LossConfig::default()), (LossId::Asy, clipped), (LossId::Zlpr, LossConfig::default())] {
            let engine = classic_loss(id, &logits, &labels, &cfg).unwrap().value;
            let oracle = extended_classic_value(id, &logits, &labels, &cfg).0;
            assert!(relative_error(engine, oracle) < 1e-13, "{id}: {engine} vs {oracle}");
        }
    }
}
