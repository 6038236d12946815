//! Learning-rate schedule, global-norm clipping and SGD with momentum.

use std::f64::consts::PI;

use crate::training::model::Model;

/// Linear warmup from 0 to `base_lr` over the first `⌊warmup_frac · total⌋`
/// steps, then cosine decay from `base_lr` to 0.
pub fn lr_schedule(step: usize, total_steps: usize, base_lr: f64, warmup_frac: f64) -> f64 {
    let warmup = (warmup_frac * total_steps as f64).floor() as usize;
    if step < warmup {
        return base_lr * step as f64 / warmup as f64;
    }
    let decay = total_steps.saturating_sub(warmup).max(1);
    let t = (step - warmup) as f64 / decay as f64;
    base_lr * (1.0 + (PI * t.min(1.0)).cos()) / 2.0
}

/// Global L2 norm over a set of tensors.
pub fn global_norm<'a>(tensors: impl IntoIterator<Item = &'a crate::numerics::Matrix>) -> f64 {
    tensors.into_iter().flat_map(|m| m.iter()).map(|x| x * x).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so that their global norm is at most `threshold`.
/// Returns the norm before clipping.
pub fn clip_gradient(grads: &mut Model, threshold: f64) -> f64 {
    let norm = global_norm(grads.tensors());
    if norm > threshold {
        let scale = threshold / norm;
        for t in grads.tensors_mut() {
            *t *= scale;
        }
    }
    norm
}

/// SGD with heavy-ball momentum and decoupled weight decay:
/// `v ← μ v + g`, `θ ← θ − lr (v + wd θ)`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Model,
}

impl Sgd {
    pub fn new(model: &Model, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: model.zeros_like(),
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &Model, lr: f64) {
        let decayed = model.decayed();
        let params = model.tensors_mut();
        let vel = self.velocity.tensors_mut();
        for (((p, v), g), decay) in params.into_iter().zip(vel).zip(grads.tensors()).zip(decayed) {
            v.zip_mut_with(g, |v, &g| *v = self.momentum * *v + g);
            let wd = if decay { self.weight_decay } else { 0.0 };
            p.zip_mut_with(v, |p, &v| *p -= lr * (v + wd * *p));
        }
    }
}
