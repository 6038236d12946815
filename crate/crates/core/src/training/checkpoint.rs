//! Versioned JSON checkpoint: config echo, seed, tensors with their shapes and
//! the training log. Floats are written in shortest round-trip form, so
//! write → read → write is byte-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LossConfig, LossId};
use crate::training::{EpochLog, Model, TrainConfig, TrainOutput};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub loss: LossId,
    pub loss_config: LossConfig,
    pub train_config: TrainConfig,
    pub seed: u64,
    pub model: Model,
    pub log: Vec<EpochLog>,
}

impl Checkpoint {
    pub fn new(id: LossId, cfg: &LossConfig, tcfg: &TrainConfig, out: TrainOutput) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            loss: id,
            loss_config: cfg.clone(),
            train_config: tcfg.clone(),
            seed: tcfg.seed,
            model: out.model,
            log: out.log,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        ck.check_shapes()?;
        Ok(ck)
    }

    fn check_shapes(&self) -> Result<()> {
        let m = &self.model;
        let h = m.hidden();
        let expect = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("checkpoint tensor `{what}` has an inconsistent shape")))
            }
        };
        expect(m.enc_b1.dim() == (1, h), "enc_b1")?;
        expect(m.enc_w2.dim() == (h, h), "enc_w2")?;
        expect(m.enc_b2.dim() == (1, h), "enc_b2")?;
        expect(m.out_w1.ncols() == h, "out_w1")?;
        expect(m.prototypes.nrows() == 0 || m.prototypes.ncols() == m.out_w2.nrows(), "prototypes")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::Stage;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = Model::init(&mut rng, Stage::Head, 3, 4, 5, 2, true).unwrap();
        let log = vec![EpochLog {
            epoch: 0,
            loss: 1.0 / 3.0,
            lr: 0.1,
            prr: Some(0.2),
        }];
        Checkpoint::new(LossId::Reg, &LossConfig::default(), &TrainConfig::default(), TrainOutput { model, log })
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let text = ck.to_json();
        let back = Checkpoint::from_json(&text).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn rejects_bad_version_and_shapes() {
        let mut ck = sample();
        ck.version = 99;
        assert!(matches!(Checkpoint::from_json(&ck.to_json()), Err(Error::Config(_))));
        let mut ck = sample();
        ck.model.enc_b2 = crate::numerics::Matrix::zeros((1, 7));
        assert!(Checkpoint::from_json(&ck.to_json()).is_err());
        assert!(matches!(Checkpoint::from_json("{"), Err(Error::Parse { .. })));
    }
}
