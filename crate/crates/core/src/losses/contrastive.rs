//! Pair structures of the individual contrastive losses.

use std::collections::BTreeMap;

use crate::data::{intersection_size, jaccard, overlap_ratio, positive_sets, ContrastiveBatch};
use crate::error::{Error, Result};
use crate::losses::engine::{contrastive_engine, weighted_instance_pairs, Denominator, GradientBundle, PairStructure};
use crate::losses::{LossConfig, LossId, ProtoDenominator};

fn require_prototypes(batch: &ContrastiveBatch, what: &str) -> Result<usize> {
    batch
        .prototypes()
        .map(|c| c.nrows())
        .ok_or_else(|| Error::config(format!("{what} requires label prototypes but the batch has none")))
}

/// Label-grouped positives: for anchor `i` and each `j ∈ Δ(i)` the group is
/// `P(j, i)`, plus prototype `c_j` when `with_prototypes`. Member `l` of a group
/// gets `f(y_i, y_l) / N(j, i)` with `N(j, i)` the group's total `f`;
/// prototypes get `f = 1`. Contributions of the same candidate through
/// several labels add up. With `per_anchor` the sum is divided by `|y_i|`.
///
/// The denominator is every candidate except the anchor; `norm = 1`, `scale = 1/n`.
fn grouped_pairs<F>(batch: &ContrastiveBatch, with_prototypes: bool, f: F, per_anchor: bool) -> Result<PairStructure>
where
    F: Fn(&[usize], &[usize]) -> f64,
{
    let n = batch.len();
    let protos = if with_prototypes { batch.num_labels() } else { 0 };
    let labels = batch.labels();
    let sets = positive_sets(labels);
    let mut pairs = PairStructure::empty(n, protos);
    for i in 0..n {
        let yi = labels.row(i);
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for &j in yi {
            let mut group: Vec<(usize, f64)> = sets.get(j, i).into_iter().map(|l| (l, f(yi, labels.row(l)))).collect();
            if with_prototypes {
                group.push((n + j, 1.0));
            }
            let total: f64 = group.iter().map(|&(_, w)| w).sum();
            if !(total > 0.0) {
                continue;
            }
            for (l, w) in group {
                *acc.entry(l).or_insert(0.0) += w / total;
            }
        }
        let outer = if per_anchor { 1.0 / yi.len() as f64 } else { 1.0 };
        for (k, w) in acc {
            if w > 0.0 {
                pairs.positives[i].push(k);
                pairs.weights[i].push(w * outer);
            }
        }
        for k in 0..n + protos {
            pairs.denominator[[i, k]] = k != i;
        }
        pairs.scale[i] = 1.0 / n as f64;
    }
    Ok(pairs)
}

/// Jaccard-weighted SupCon extension over instance positives.
pub fn base_pairs(batch: &ContrastiveBatch) -> Result<PairStructure> {
    weighted_instance_pairs(batch, |a, b| jaccard(a, b).unwrap_or(0.0), Denominator::Batch)
}

/// Instance-to-prototype loss: positives are the prototypes of the anchor's labels.
pub fn proto_pairs(batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<PairStructure> {
    let l = require_prototypes(batch, "proto")?;
    let n = batch.len();
    let mut pairs = PairStructure::empty(n, l);
    for i in 0..n {
        let yi = batch.labels().row(i);
        pairs.positives[i] = yi.iter().map(|&j| n + j).collect();
        pairs.weights[i] = vec![1.0; yi.len()];
        pairs.norm[i] = yi.len() as f64;
        pairs.scale[i] = 1.0 / n as f64;
        for k in 0..n + l {
            pairs.denominator[[i, k]] = match cfg.proto_denominator {
                ProtoDenominator::Prototypes => k >= n,
                ProtoDenominator::BatchAndPrototypes => k != i,
            };
        }
    }
    Ok(pairs)
}

/// Per-label SupCon terms, averaged over all (anchor, label) incidences.
pub fn mulsupcon_pairs(batch: &ContrastiveBatch) -> Result<PairStructure> {
    let mut pairs = grouped_pairs(batch, false, |_, _| 1.0, false)?;
    let incidences: usize = batch.labels().rows().iter().map(Vec::len).sum();
    pairs.scale = vec![1.0 / incidences as f64; batch.len()];
    Ok(pairs)
}

/// Frequency-reweighted loss with prototypes; instance candidates enter the
/// denominator with weight `β`.
pub fn msc_pairs(batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<PairStructure> {
    require_prototypes(batch, "msc")?;
    let mut pairs = grouped_pairs(
        batch,
        true,
        |a, b| 1.0 / (a.len() + b.len() - intersection_size(a, b)) as f64,
        true,
    )?;
    for k in 0..pairs.instances {
        pairs.column_scale[k] = cfg.beta;
    }
    Ok(pairs)
}

/// Label-grouped positives with prototypes as extra batch members, optionally
/// weighted by the label-overlap ratio.
pub fn reg_pairs(batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<PairStructure> {
    if cfg.use_prototypes {
        require_prototypes(batch, "reg")?;
    }
    let alpha = cfg.alpha;
    if cfg.use_alpha_weighting {
        grouped_pairs(batch, cfg.use_prototypes, |a, b| overlap_ratio(a, b, alpha).unwrap_or(0.0), true)
    } else {
        grouped_pairs(batch, cfg.use_prototypes, |_, _| 1.0, true)
    }
}

/// Single-label supervised contrastive structure.
pub fn supcon_pairs(batch: &ContrastiveBatch) -> Result<PairStructure> {
    if let Some(i) = batch.labels().rows().iter().position(|r| r.len() != 1) {
        return Err(Error::domain(format!(
            "supcon needs exactly one label per instance but instance {i} has {}; use base, mulsupcon or reg for multi-label data",
            batch.labels().row(i).len()
        )));
    }
    weighted_instance_pairs(batch, |a, b| if a == b { 1.0 } else { 0.0 }, Denominator::Batch)
}

/// Pair structure of any contrastive loss.
pub fn pair_structure(id: LossId, batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<PairStructure> {
    match id {
        LossId::Base => base_pairs(batch),
        LossId::Proto => proto_pairs(batch, cfg),
        LossId::MulSupCon => mulsupcon_pairs(batch),
        LossId::Msc => msc_pairs(batch, cfg),
        LossId::Reg | LossId::RegNoReg => reg_pairs(batch, cfg),
        LossId::SupCon | LossId::SupConReg => supcon_pairs(batch),
        LossId::Bce | LossId::Asy | LossId::Zlpr => {
            Err(Error::config(format!("`{id}` is not a contrastive loss; it operates on logits")))
        }
    }
}

pub fn loss_base(batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<GradientBundle> {
    contrastive_engine(batch, base_pairs(batch)?, cfg)
}

pub fn loss_proto(batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<GradientBundle> {
    contrastive_engine(batch, proto_pairs(batch, cfg)?, cfg)
}

pub fn loss_mulsupcon(batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<GradientBundle> {
    contrastive_engine(batch, mulsupcon_pairs(batch)?, cfg)
}

pub fn loss_msc(batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<GradientBundle> {
    contrastive_engine(batch, msc_pairs(batch, cfg)?, cfg)
}

/// Honours `cfg.use_regularizer`; `false` gives the unregularized ablation.
pub fn loss_reg(batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<GradientBundle> {
    contrastive_engine(batch, reg_pairs(batch, cfg)?, cfg)
}

/// Plain SupCon; the regularizer flag is ignored.
pub fn loss_supcon(batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<GradientBundle> {
    let cfg = LossConfig {
        use_regularizer: false,
        ..cfg.clone()
    };
    contrastive_engine(batch, supcon_pairs(batch)?, &cfg)
}

pub fn loss_supcon_reg(batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<GradientBundle> {
    let cfg = LossConfig {
        use_regularizer: true,
        ..cfg.clone()
    };
    contrastive_engine(batch, supcon_pairs(batch)?, &cfg)
}
