//! Synthetic long-tailed multi-label data.
//!
//! Label `r` (0-based rank) has base weight `(r + 1)^(-tail_exponent)`. Each
//! instance draws `1 + Poisson(avg_labels - 1)` labels (capped at `L`) without
//! replacement; once a label is chosen, its rank neighbours get their weight
//! multiplied by `1 + cooccurrence_boost`, so head labels pull in their tail
//! neighbours. Features are `W y + noise * ε` with a fixed Gaussian `W` (one
//! centroid per label) and i.i.d. standard normal `ε`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{LabelMatrix, MultiLabelDataset, SplitSizes};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// PRNG identifier recorded in every generated dataset.
pub const RNG_ID: &str = "chacha8";
const GENERATOR_ID: &str = "longtail-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n: usize,
    pub labels: usize,
    pub features: usize,
    pub seed: u64,
    pub tail_exponent: f64,
    pub avg_labels: f64,
    pub noise: f64,
    pub cooccurrence_boost: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n: 4000,
            labels: 20,
            features: 32,
            seed: 0,
            tail_exponent: 1.2,
            avg_labels: 2.0,
            noise: 1.0,
            cooccurrence_boost: 2.0,
            train_fraction: 0.5,
            val_fraction: 0.25,
        }
    }
}

impl GeneratorConfig {
    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.labels == 0 || self.features == 0 {
            return Err(Error::config("n, labels and features must all be at least 1"));
        }
        if !(self.tail_exponent > 0.0) {
            return Err(Error::config("tail_exponent must be positive"));
        }
        if !(self.avg_labels >= 1.0) || self.avg_labels > self.labels as f64 {
            return Err(Error::config(format!(
                "avg_labels must lie in [1, L = {}], got {}",
                self.labels, self.avg_labels
            )));
        }
        if !(self.noise >= 0.0) || !(self.cooccurrence_boost >= 0.0) {
            return Err(Error::config("noise and cooccurrence_boost must be non-negative"));
        }
        let f = (self.train_fraction, self.val_fraction);
        if !(f.0 > 0.0 && f.1 >= 0.0 && f.0 + f.1 <= 1.0) {
            return Err(Error::config("split fractions must satisfy 0 < train, 0 <= val, train + val <= 1"));
        }
        Ok(())
    }

    fn split_sizes(&self) -> SplitSizes {
        let train = ((self.n as f64 * self.train_fraction).round() as usize).clamp(1, self.n);
        let val = ((self.n as f64 * self.val_fraction).round() as usize).min(self.n - train);
        SplitSizes {
            train,
            val,
            test: self.n - train - val,
        }
    }

    fn meta(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("generator".into(), GENERATOR_ID.into());
        m.insert("rng".into(), RNG_ID.into());
        m.insert("seed".into(), self.seed.to_string());
        m.insert("tail_exponent".into(), format!("{:?}", self.tail_exponent));
        m.insert("avg_labels".into(), format!("{:?}", self.avg_labels));
        m.insert("noise".into(), format!("{:?}", self.noise));
        m.insert("cooccurrence_boost".into(), format!("{:?}", self.cooccurrence_boost));
        m
    }
}

fn draw_label_set<R: Rng>(rng: &mut R, base: &[f64], count: usize, boost: f64) -> Vec<usize> {
    let num_labels = base.len();
    let mut weights = base.to_vec();
    let mut chosen = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = weights.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = num_labels - 1;
        for (j, &w) in weights.iter().enumerate() {
            if w > 0.0 && target < w {
                pick = j;
                break;
            }
            target -= w;
        }
        // Float slop can leave `pick` on an already-chosen label; take the last live one.
        if weights[pick] == 0.0 {
            pick = weights.iter().rposition(|&w| w > 0.0).expect("count <= L");
        }
        chosen.push(pick);
        weights[pick] = 0.0;
        for nb in [pick.wrapping_sub(1), pick + 1] {
            if nb < num_labels && weights[nb] > 0.0 {
                weights[nb] *= 1.0 + boost;
            }
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Generates a long-tailed multi-label dataset; bit-identical for equal configs.
pub fn generate_longtail(cfg: &GeneratorConfig) -> Result<MultiLabelDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, l, p) = (cfg.n, cfg.labels, cfg.features);

    let centroids: Matrix = Matrix::from_shape_simple_fn((l, p), || rng.sample(StandardNormal));
    let base: Vec<f64> = (0..l).map(|r| ((r + 1) as f64).powf(-cfg.tail_exponent)).collect();
    let extra = Poisson::new(cfg.avg_labels - 1.0).ok();

    let mut rows = Vec::with_capacity(n);
    let mut features = Matrix::zeros((n, p));
    for i in 0..n {
        let k = 1 + extra.as_ref().map_or(0, |d| d.sample(&mut rng) as usize);
        let row = draw_label_set(&mut rng, &base, k.min(l), cfg.cooccurrence_boost);
        let mut x = features.row_mut(i);
        for &j in &row {
            x += &centroids.row(j);
        }
        for v in x.iter_mut() {
            *v += cfg.noise * rng.sample::<f64, _>(StandardNormal);
        }
        rows.push(row);
    }
    let labels = LabelMatrix::new(l, rows)?;
    MultiLabelDataset::new(features, labels, cfg.split_sizes(), cfg.meta())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let cfg = GeneratorConfig {
            n: 300,
            ..Default::default()
        };
        let a = generate_longtail(&cfg).unwrap();
        let b = generate_longtail(&cfg).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        let c = generate_longtail(&GeneratorConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.to_text(), c.to_text());
    }

    #[test]
    fn degenerate_floor() {
        let ds = generate_longtail(&GeneratorConfig {
            n: 1,
            labels: 1,
            features: 1,
            avg_labels: 1.0,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.labels.row(0), &[0]);
        assert_eq!(ds.split.train, 1);
    }

    #[test]
    fn infeasible_parameters() {
        let bad = GeneratorConfig {
            labels: 3,
            avg_labels: 4.0,
            ..Default::default()
        };
        assert!(matches!(generate_longtail(&bad), Err(Error::Config(_))));
        let bad = GeneratorConfig {
            tail_exponent: 0.0,
            ..Default::default()
        };
        assert!(generate_longtail(&bad).is_err());
    }

    #[test]
    fn every_instance_labelled_and_marginals_decay() {
        let ds = generate_longtail(&GeneratorConfig::default()).unwrap();
        ds.labels.require_nonempty_rows().unwrap();
        let mut freq = vec![0usize; ds.num_labels()];
        for row in ds.labels.rows() {
            for &j in row {
                freq[j] += 1;
            }
        }
        assert!(freq[0] > freq[4] && freq[4] > freq[19], "{freq:?}");
        let mean = ds.labels.rows().iter().map(Vec::len).sum::<usize>() as f64 / ds.len() as f64;
        assert!((mean - 2.0).abs() < 0.15, "{mean}");
        assert_eq!(ds.split, SplitSizes { train: 2000, val: 1000, test: 1000 });
    }

    #[test]
    fn steep_tail_rank_ratio() {
        // Single-label draws: P(rank 1) / P(rank 2) = 2^a exactly in expectation.
        for a in [2.0, 3.0] {
            let ds = generate_longtail(&GeneratorConfig {
                n: 10_000,
                labels: 6,
                features: 2,
                tail_exponent: a,
                avg_labels: 1.0,
                ..Default::default()
            })
            .unwrap();
            let f0 = ds.labels.rows().iter().filter(|r| r[0] == 0).count() as f64;
            let f1 = ds.labels.rows().iter().filter(|r| r[0] == 1).count() as f64;
            let ratio = f0 / f1;
            assert!(ratio >= 0.85 * 2f64.powf(a), "a = {a}: ratio {ratio}");
        }
    }
}
