//! The loss zoo: multi-label contrastive losses expressed through one
//! generalized engine, the gradient regularizer, and the non-contrastive
//! baselines (BCE, asymmetric, ZLPR).

mod classic;
mod contrastive;
mod engine;
pub mod reg_forms;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::ContrastiveBatch;
use crate::error::{Error, Result};

pub use classic::{loss_asymmetric, loss_bce, loss_zlpr, ClassicLoss};
pub use contrastive::{
    base_pairs, loss_base, loss_msc, loss_mulsupcon, loss_proto, loss_reg, loss_supcon, loss_supcon_reg, msc_pairs,
    mulsupcon_pairs, pair_structure, proto_pairs, reg_pairs, supcon_pairs,
};
pub use engine::{
    contrastive_engine, generalized_contrastive, prr, reg_term, weighted_instance_pairs, Denominator, GateRecord,
    GradientBundle, PairStructure, RegTerm,
};

/// Denominator used by the prototype-only loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ProtoDenominator {
    /// Sum over the prototype set only.
    #[default]
    Prototypes,
    /// Sum over all other instances and all prototypes.
    #[serde(rename = "batch+C")]
    BatchAndPrototypes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Temperature of the cosine similarity.
    pub tau: f64,
    /// Exponent of the label-overlap weight.
    pub alpha: f64,
    /// Denominator weight of instance negatives in the MSC loss.
    pub beta: f64,
    pub gamma_pos: f64,
    pub gamma_neg: f64,
    /// Hard threshold of the asymmetric loss.
    pub margin: f64,
    pub use_prototypes: bool,
    pub use_regularizer: bool,
    pub use_alpha_weighting: bool,
    /// Guards 0/0 in the matrix-form weight normalization.
    pub epsilon: f64,
    /// Anchors without positives become an error instead of being skipped.
    pub strict: bool,
    pub proto_denominator: ProtoDenominator,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            alpha: 0.0,
            beta: 1.0,
            gamma_pos: 0.0,
            gamma_neg: 1.0,
            margin: 0.0,
            use_prototypes: true,
            use_regularizer: false,
            use_alpha_weighting: false,
            epsilon: 1e-12,
            strict: false,
            proto_denominator: ProtoDenominator::Prototypes,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::config(what.to_string()));
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad("tau must be positive");
        }
        if !(self.alpha >= 0.0) {
            return bad("alpha must be non-negative");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be non-negative");
        }
        if !(self.gamma_pos >= 0.0 && self.gamma_neg >= 0.0) {
            return bad("gamma_pos and gamma_neg must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.margin) {
            return bad("margin must lie in [0, 1]");
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-6) {
            return bad("epsilon must lie in (0, 1e-6]");
        }
        Ok(())
    }
}

/// Loss identifiers accepted on the command line and in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LossId {
    Bce,
    Asy,
    Zlpr,
    Base,
    Proto,
    MulSupCon,
    Msc,
    Reg,
    RegNoReg,
    SupCon,
    SupConReg,
}

impl LossId {
    pub const ALL: [LossId; 11] = [
        LossId::Bce,
        LossId::Asy,
        LossId::Zlpr,
        LossId::Base,
        LossId::Proto,
        LossId::MulSupCon,
        LossId::Msc,
        LossId::Reg,
        LossId::RegNoReg,
        LossId::SupCon,
        LossId::SupConReg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossId::Bce => "bce",
            LossId::Asy => "asy",
            LossId::Zlpr => "zlpr",
            LossId::Base => "base",
            LossId::Proto => "proto",
            LossId::MulSupCon => "mulsupcon",
            LossId::Msc => "msc",
            LossId::Reg => "reg",
            LossId::RegNoReg => "reg-noreg",
            LossId::SupCon => "supcon",
            LossId::SupConReg => "supcon-reg",
        }
    }

    /// Operates on embeddings (as opposed to per-label logits).
    pub fn is_contrastive(self) -> bool {
        !matches!(self, LossId::Bce | LossId::Asy | LossId::Zlpr)
    }

    /// Needs trainable label prototypes.
    pub fn uses_prototypes(self) -> bool {
        matches!(self, LossId::Proto | LossId::Msc | LossId::Reg | LossId::RegNoReg)
    }

    /// Adds the gradient regularizer.
    pub fn is_regularized(self) -> bool {
        matches!(self, LossId::Reg | LossId::SupConReg)
    }

    /// Requires exactly one label per instance.
    pub fn is_single_label(self) -> bool {
        matches!(self, LossId::SupCon | LossId::SupConReg)
    }
}

impl fmt::Display for LossId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = LossId::ALL.iter().map(|l| l.as_str()).collect();
                Error::config(format!("unknown loss id `{s}` (expected one of: {})", known.join(" | ")))
            })
    }
}

impl TryFrom<String> for LossId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LossId> for String {
    fn from(id: LossId) -> String {
        id.as_str().to_string()
    }
}

/// Evaluates a contrastive loss by identifier. The regularizer flag is set by
/// the identifier for `reg`, `reg-noreg`, `supcon` and `supcon-reg`; the other
/// losses honour `cfg.use_regularizer`.
pub fn contrastive_loss(id: LossId, batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<GradientBundle> {
    let mut cfg = cfg.clone();
    match id {
        LossId::Reg | LossId::SupConReg => cfg.use_regularizer = true,
        LossId::RegNoReg | LossId::SupCon => cfg.use_regularizer = false,
        _ => {}
    }
    match id {
        LossId::Base => loss_base(batch, &cfg),
        LossId::Proto => loss_proto(batch, &cfg),
        LossId::MulSupCon => loss_mulsupcon(batch, &cfg),
        LossId::Msc => loss_msc(batch, &cfg),
        LossId::Reg | LossId::RegNoReg => loss_reg(batch, &cfg),
        LossId::SupCon => loss_supcon(batch, &cfg),
        LossId::SupConReg => loss_supcon_reg(batch, &cfg),
        LossId::Bce | LossId::Asy | LossId::Zlpr => Err(Error::config(format!(
            "`{id}` is not a contrastive loss; it operates on logits"
        ))),
    }
}

/// Evaluates a non-contrastive loss on `n × L` logits.
pub fn classic_loss(
    id: LossId,
    logits: &crate::numerics::Matrix,
    labels: &crate::data::LabelMatrix,
    cfg: &LossConfig,
) -> Result<ClassicLoss> {
    match id {
        LossId::Bce => loss_bce(logits, labels),
        LossId::Asy => loss_asymmetric(logits, labels, cfg),
        LossId::Zlpr => loss_zlpr(logits, labels),
        _ => Err(Error::config(format!("`{id}` is a contrastive loss; it operates on embeddings"))),
    }
}
