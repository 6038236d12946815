//! Encoder, projection head, linear decoder and trainable prototypes with a
//! hand-written backward pass.
//!
//! Shapes (rows are instances):
//!
//! ```text
//! encoder  f = relu(x W1ᵀ + b1) W2ᵀ + b2      x: n×p, f: n×h
//! head     z = relu(f H1ᵀ) H2ᵀ                z: n×d
//! decoder  logits = f Dᵀ + e                  logits: n×L
//! ```

use ndarray::Axis;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Which output stage the model carries besides the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Projection head for contrastive losses, optionally with prototypes.
    Head,
    /// Linear decoder producing per-label logits.
    Decoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub stage: Stage,
    pub enc_w1: Matrix,
    pub enc_b1: Matrix,
    pub enc_w2: Matrix,
    pub enc_b2: Matrix,
    /// Head `H1` (h×h) or decoder `D` (L×h).
    pub out_w1: Matrix,
    /// Head `H2` (d×h) or decoder bias `e` (1×L).
    pub out_w2: Matrix,
    /// Label prototypes (L×d); empty when unused.
    pub prototypes: Matrix,
}

/// Tensor names in [`Model::tensors`] order.
pub const TENSOR_NAMES: [&str; 7] = ["enc_w1", "enc_b1", "enc_w2", "enc_b2", "out_w1", "out_w2", "prototypes"];

fn gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Matrix {
    Matrix::from_shape_simple_fn((rows, cols), || std * rng.sample::<f64, _>(StandardNormal))
}

fn relu(a: &Matrix) -> Matrix {
    a.mapv(|x| x.max(0.0))
}

fn relu_back(grad: &Matrix, pre: &Matrix) -> Matrix {
    let mut g = grad.clone();
    g.zip_mut_with(pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0
        }
    });
    g
}

/// Rows drawn uniformly on the unit sphere.
pub fn unit_sphere_rows<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let mut m = gaussian(rng, rows, cols, 1.0);
    for mut row in m.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    m
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    pub input: Matrix,
    enc_pre: Matrix,
    enc_hidden: Matrix,
    pub features: Matrix,
    out_pre: Matrix,
    out_hidden: Matrix,
    /// Head embeddings or decoder logits.
    pub output: Matrix,
}

impl Model {
    /// He-scaled Gaussian weights, zero biases, unit-sphere prototypes.
    pub fn init<R: Rng>(
        rng: &mut R,
        stage: Stage,
        inputs: usize,
        hidden: usize,
        proj_dim: usize,
        labels: usize,
        with_prototypes: bool,
    ) -> Result<Self> {
        if inputs == 0 || hidden == 0 || proj_dim == 0 || labels == 0 {
            return Err(Error::config("model dimensions must be at least 1"));
        }
        let he = |fan_in: usize| (2.0 / fan_in as f64).sqrt();
        let enc_w1 = gaussian(rng, hidden, inputs, he(inputs));
        let enc_w2 = gaussian(rng, hidden, hidden, he(hidden));
        let (out_w1, out_w2) = match stage {
            Stage::Head => (
                gaussian(rng, hidden, hidden, he(hidden)),
                gaussian(rng, proj_dim, hidden, he(hidden)),
            ),
            Stage::Decoder => (gaussian(rng, labels, hidden, (1.0 / hidden as f64).sqrt()), Matrix::zeros((1, labels))),
        };
        let prototypes = if with_prototypes && stage == Stage::Head {
            unit_sphere_rows(rng, labels, proj_dim)
        } else {
            Matrix::zeros((0, proj_dim))
        };
        Ok(Self {
            stage,
            enc_w1,
            enc_b1: Matrix::zeros((1, hidden)),
            enc_w2,
            enc_b2: Matrix::zeros((1, hidden)),
            out_w1,
            out_w2,
            prototypes,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.dim());
        Self {
            stage: self.stage,
            enc_w1: z(&self.enc_w1),
            enc_b1: z(&self.enc_b1),
            enc_w2: z(&self.enc_w2),
            enc_b2: z(&self.enc_b2),
            out_w1: z(&self.out_w1),
            out_w2: z(&self.out_w2),
            prototypes: z(&self.prototypes),
        }
    }

    pub fn tensors(&self) -> [&Matrix; 7] {
        [
            &self.enc_w1,
            &self.enc_b1,
            &self.enc_w2,
            &self.enc_b2,
            &self.out_w1,
            &self.out_w2,
            &self.prototypes,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 7] {
        [
            &mut self.enc_w1,
            &mut self.enc_b1,
            &mut self.enc_w2,
            &mut self.enc_b2,
            &mut self.out_w1,
            &mut self.out_w2,
            &mut self.prototypes,
        ]
    }

    /// Weight-decay mask aligned with [`Model::tensors`]: weight matrices only.
    pub fn decayed(&self) -> [bool; 7] {
        let head = self.stage == Stage::Head;
        [true, false, true, false, true, head, false]
    }

    pub fn has_prototypes(&self) -> bool {
        self.prototypes.nrows() > 0
    }

    pub fn hidden(&self) -> usize {
        self.enc_w1.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.enc_w1.ncols()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.ncols() != self.inputs() {
            return Err(Error::Shape {
                expected: (x.nrows(), self.inputs()),
                actual: x.dim(),
            });
        }
        Ok(())
    }

    /// Encoder output; the representation used for evaluation.
    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let hidden = relu(&(x.dot(&self.enc_w1.t()) + &self.enc_b1));
        Ok(hidden.dot(&self.enc_w2.t()) + &self.enc_b2)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Activations> {
        self.check_input(x)?;
        let enc_pre = x.dot(&self.enc_w1.t()) + &self.enc_b1;
        let enc_hidden = relu(&enc_pre);
        let features = enc_hidden.dot(&self.enc_w2.t()) + &self.enc_b2;
        let (out_pre, out_hidden, output) = match self.stage {
            Stage::Head => {
                let pre = features.dot(&self.out_w1.t());
                let hidden = relu(&pre);
                let z = hidden.dot(&self.out_w2.t());
                (pre, hidden, z)
            }
            Stage::Decoder => {
                let logits = features.dot(&self.out_w1.t()) + &self.out_w2;
                (Matrix::zeros((0, 0)), Matrix::zeros((0, 0)), logits)
            }
        };
        Ok(Activations {
            input: x.clone(),
            enc_pre,
            enc_hidden,
            features,
            out_pre,
            out_hidden,
            output,
        })
    }

    /// Parameter gradients from `∂L/∂output` (and `∂L/∂C` when prototypes are used).
    pub fn backward(&self, act: &Activations, d_output: &Matrix, d_prototypes: Option<&Matrix>) -> Self {
        let mut g = self.zeros_like();
        let d_features = match self.stage {
            Stage::Head => {
                g.out_w2 = d_output.t().dot(&act.out_hidden);
                let d_pre = relu_back(&d_output.dot(&self.out_w2), &act.out_pre);
                g.out_w1 = d_pre.t().dot(&act.features);
                d_pre.dot(&self.out_w1)
            }
            Stage::Decoder => {
                g.out_w1 = d_output.t().dot(&act.features);
                g.out_w2 = d_output.sum_axis(Axis(0)).insert_axis(Axis(0));
                d_output.dot(&self.out_w1)
            }
        };
        g.enc_w2 = d_features.t().dot(&act.enc_hidden);
        g.enc_b2 = d_features.sum_axis(Axis(0)).insert_axis(Axis(0));
        let d_pre = relu_back(&d_features.dot(&self.enc_w2), &act.enc_pre);
        g.enc_w1 = d_pre.t().dot(&act.input);
        g.enc_b1 = d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
        if let Some(dc) = d_prototypes {
            if self.has_prototypes() {
                g.prototypes = dc.clone();
            }
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_difference_gradient;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn check_backward(stage: Stage) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = Model::init(&mut rng, stage, 5, 6, 7, 3, false).unwrap();
        // Nonzero biases keep every pre-activation away from the ReLU kink.
        model.enc_b1 = gaussian(&mut rng, 1, 6, 1.0);
        model.enc_b2 = gaussian(&mut rng, 1, 6, 1.0);
        let x = gaussian(&mut rng, 4, 5, 1.0);
        let act = model.forward(&x).unwrap();
        // L = Σ w ⊙ output with a fixed random w.
        let w = gaussian(&mut rng, act.output.nrows(), act.output.ncols(), 1.0);
        let grads = model.backward(&act, &w, None);
        for t in 0..6 {
            let fd = finite_difference_gradient(
                |p| {
                    let mut m = model.clone();
                    *m.tensors_mut()[t] = p.clone();
                    (m.forward(&x).unwrap().output * &w).sum()
                },
                model.tensors()[t],
                1e-6,
            )
            .unwrap();
            for (a, b) in grads.tensors()[t].iter().zip(fd.iter()) {
                assert!((a - b).abs() < 1e-6 * (1.0 + a.abs()), "{} {a} vs {b}", TENSOR_NAMES[t]);
            }
        }
    }

    #[test]
    fn head_backward_matches_fd() {
        check_backward(Stage::Head);
    }

    #[test]
    fn decoder_backward_matches_fd() {
        check_backward(Stage::Decoder);
    }

    #[test]
    fn prototypes_are_unit_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Model::init(&mut rng, Stage::Head, 3, 4, 8, 5, true).unwrap();
        assert_eq!(m.prototypes.dim(), (5, 8));
        for row in m.prototypes.rows() {
            assert!((row.dot(&row) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn features_match_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Model::init(&mut rng, Stage::Head, 3, 4, 8, 5, false).unwrap();
        let x = gaussian(&mut rng, 6, 3, 1.0);
        assert_eq!(m.features(&x).unwrap(), m.forward(&x).unwrap().features);
        assert!(m.features(&gaussian(&mut rng, 2, 4, 1.0)).is_err());
    }
}
