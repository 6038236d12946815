//! Two-stage desk-scale training: encoder pre-training with a contrastive or
//! classic loss, then linear evaluation on frozen encoder features.

mod checkpoint;
mod linear;
mod model;
mod optim;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use linear::{linear_eval, LinearEvalConfig, LinearProbe, Standardizer, DECISION_THRESHOLD};
pub use model::{unit_sphere_rows, Activations, Model, Stage, TENSOR_NAMES};
pub use optim::{clip_gradient, global_norm, lr_schedule, Sgd};

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ContrastiveBatch, LabelMatrix, MultiLabelDataset, Split};
use crate::error::{Error, Result};
use crate::losses::{classic_loss, contrastive_loss, LossConfig, LossId};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup_frac: f64,
    pub clip: f64,
    pub seed: u64,
    pub hidden: usize,
    pub proj_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 128,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            warmup_frac: 0.05,
            clip: 1.0,
            seed: 0,
            hidden: 64,
            proj_dim: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be finite and non-negative, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::config(format!("warmup_frac must lie in [0, 1), got {}", self.warmup_frac)));
        }
        if !(self.clip > 0.0) {
            return Err(Error::config(format!("clip must be positive, got {}", self.clip)));
        }
        if self.hidden == 0 || self.proj_dim == 0 {
            return Err(Error::config("hidden and proj_dim must be at least 1"));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    /// Open-gate fraction over all positive pairs of the epoch.
    pub prr: Option<f64>,
}

/// Training log as CSV (`epoch,loss,lr,prr`); an absent PRR is an empty cell.
pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,loss,lr,prr\n");
    for row in log {
        let prr = row.prr.map(|p| format!("{p:?}")).unwrap_or_default();
        out.push_str(&format!("{},{:?},{:?},{}\n", row.epoch, row.loss, row.lr, prr));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: Model,
    pub log: Vec<EpochLog>,
}

/// Whether `id` trains prototypes under `cfg`.
pub fn needs_prototypes(id: LossId, cfg: &LossConfig) -> bool {
    match id {
        LossId::Reg | LossId::RegNoReg => cfg.use_prototypes,
        other => other.uses_prototypes(),
    }
}

/// Loss value and output-side gradients of one batch, plus gate counts.
struct BatchLoss {
    value: f64,
    d_output: Matrix,
    d_prototypes: Option<Matrix>,
    open: usize,
    gates: usize,
}

fn batch_loss(id: LossId, cfg: &LossConfig, model: &Model, output: &Matrix, labels: LabelMatrix) -> Result<BatchLoss> {
    if id.is_contrastive() {
        let protos = model.has_prototypes().then(|| model.prototypes.clone());
        let batch = ContrastiveBatch::new(output.clone(), labels, protos)?;
        let out = contrastive_loss(id, &batch, cfg)?;
        Ok(BatchLoss {
            value: out.loss_value,
            d_output: out.dz,
            d_prototypes: Some(out.dc),
            open: out.gates.iter().filter(|g| g.gate > 0.0).count(),
            gates: out.gates.len(),
        })
    } else {
        let out = classic_loss(id, output, &labels, cfg)?;
        Ok(BatchLoss {
            value: out.value,
            d_output: out.grad,
            d_prototypes: None,
            open: 0,
            gates: 0,
        })
    }
}

/// Trains an encoder on the training split.
///
/// Contrastive ids train encoder, projection head and (when used) prototypes;
/// classic ids train encoder and a linear decoder. The run is a pure function
/// of its arguments: initialization and per-epoch shuffles share one ChaCha8
/// stream seeded with `tcfg.seed`.
pub fn train(dataset: &MultiLabelDataset, id: LossId, cfg: &LossConfig, tcfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    tcfg.validate()?;
    let (x, y) = dataset.part(Split::Train);
    if x.nrows() == 0 {
        return Err(Error::domain("training split is empty"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("training features must be finite"));
    }
    if id.is_single_label() && y.rows().iter().any(|r| r.len() != 1) {
        return Err(Error::domain(format!(
            "`{id}` requires exactly one label per instance; the dataset is multi-label"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let stage = if id.is_contrastive() { Stage::Head } else { Stage::Decoder };
    let mut model = Model::init(
        &mut rng,
        stage,
        x.ncols(),
        tcfg.hidden,
        tcfg.proj_dim,
        y.num_labels(),
        needs_prototypes(id, cfg),
    )?;
    let mut opt = Sgd::new(&model, tcfg.momentum, tcfg.weight_decay);
    let n = x.nrows();
    let steps_per_epoch = n.div_ceil(tcfg.batch_size);
    let total = steps_per_epoch * tcfg.epochs;
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(tcfg.epochs);
    let mut step = 0;
    for epoch in 0..tcfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut open, mut gates, mut lr) = (0.0, 0, 0, 0.0);
        for chunk in order.chunks(tcfg.batch_size) {
            let xb = x.select(Axis(0), chunk);
            let act = model.forward(&xb)?;
            let out = batch_loss(id, cfg, &model, &act.output, y.select(chunk))?;
            if !out.value.is_finite() {
                return Err(Error::Divergence { step, value: out.value });
            }
            let mut grads = model.backward(&act, &out.d_output, out.d_prototypes.as_ref());
            clip_gradient(&mut grads, tcfg.clip);
            lr = lr_schedule(step, total, tcfg.lr, tcfg.warmup_frac);
            opt.step(&mut model, &grads, lr);
            loss_sum += out.value;
            open += out.open;
            gates += out.gates;
            step += 1;
        }
        log.push(EpochLog {
            epoch,
            loss: loss_sum / steps_per_epoch as f64,
            lr,
            prr: (gates > 0).then(|| open as f64 / gates as f64),
        });
    }
    Ok(TrainOutput { model, log })
}

/// Open-gate fraction of a contrastive loss on a trained model's embeddings of
/// `x`, batched in order. `None` when no positive pair exists or the model has
/// no projection head.
pub fn measure_prr(
    model: &Model,
    x: &Matrix,
    y: &LabelMatrix,
    id: LossId,
    cfg: &LossConfig,
    batch_size: usize,
) -> Result<Option<f64>> {
    if model.stage != Stage::Head || !id.is_contrastive() || batch_size == 0 {
        return Ok(None);
    }
    let (mut open, mut gates) = (0, 0);
    let idx: Vec<usize> = (0..x.nrows()).collect();
    for chunk in idx.chunks(batch_size) {
        let act = model.forward(&x.select(Axis(0), chunk))?;
        let out = batch_loss(id, cfg, model, &act.output, y.select(chunk))?;
        open += out.open;
        gates += out.gates;
    }
    Ok((gates > 0).then(|| open as f64 / gates as f64))
}
