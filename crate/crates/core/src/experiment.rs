//! Experiment configuration and the batch commands behind the CLI.
//!
//! The configuration is one TOML file with flat dotted keys:
//!
//! ```toml
//! run.loss = "reg"
//! run.seeds = [0, 1, 2]
//! data.n = 4000
//! loss.tau = 0.1
//! train.epochs = 30
//! eval.lrs = [1.0, 0.1]
//! ```
//!
//! Every key has a default. Each command writes the effective configuration to
//! `<out>/config.toml` in the same flat form; reading it back reproduces the run.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{generate_longtail, read_dataset, write_dataset, GeneratorConfig, MultiLabelDataset, Split};
use crate::error::{Error, Result};
use crate::evaluation::MetricsReport;
use crate::losses::{LossConfig, LossId};
use crate::training::{
    linear_eval, log_csv, measure_prr, train, Checkpoint, LinearEvalConfig, Stage, TrainConfig,
};
use crate::verification::{check_gradients, GradCheckReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Loss for `train` and `sweep-tau`.
    pub loss: LossId,
    /// Training seeds; `compare` and `fraction` average over all of them.
    pub seeds: Vec<u64>,
    pub out: String,
    /// Dataset file; empty means "generate from `data.*`".
    pub dataset: String,
    /// Loss list for `compare` and `fraction`.
    pub losses: Vec<LossId>,
    /// Temperatures for `sweep-tau`.
    pub taus: Vec<f64>,
    /// Training-set fractions for `fraction`.
    pub fractions: Vec<f64>,
    pub gradcheck_trials: usize,
    pub gradcheck_tol: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            loss: LossId::Reg,
            seeds: vec![0],
            out: "out".into(),
            dataset: String::new(),
            losses: vec![LossId::Base, LossId::Reg],
            taus: vec![0.05, 0.1, 0.5, 1.0],
            fractions: vec![1.0, 0.2],
            gradcheck_trials: 100,
            gradcheck_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunConfig,
    pub data: GeneratorConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: LinearEvalConfig,
}

fn toml_error(e: toml::de::Error) -> Error {
    Error::config(e.message().to_string())
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        leaf => out.push(format!("{prefix} = {leaf}")),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(toml_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.run.seeds.is_empty() {
            return Err(Error::config("run.seeds must not be empty"));
        }
        if self.run.taus.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::config("run.taus must be positive"));
        }
        if self.run.fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(Error::config("run.fractions must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Effective configuration as sorted `section.key = value` lines.
    pub fn to_dotted(&self) -> String {
        let value = toml::Value::try_from(self).expect("config is plain data");
        let mut lines = Vec::new();
        flatten("", &value, &mut lines);
        let mut s = lines.join("\n");
        s.push('\n');
        s
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.run.out)
    }

    /// Loads `run.dataset`, or generates from `data.*` when it is empty.
    pub fn dataset(&self) -> Result<MultiLabelDataset> {
        if self.run.dataset.is_empty() {
            generate_longtail(&self.data)
        } else {
            read_dataset(&self.run.dataset)
        }
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }

    fn prepare_out(&self) -> Result<PathBuf> {
        let dir = self.out_dir();
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("config.toml"), self.to_dotted())?;
        Ok(dir)
    }
}

/// `{:?}` for floats prints the shortest string that round-trips.
fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

/// Linear-probe metrics of a trained model on the test split. PRR is
/// measured on the test split with the model's own loss (absent for classic
/// losses).
pub fn evaluate_checkpoint(ck: &Checkpoint, dataset: &MultiLabelDataset, eval: &LinearEvalConfig) -> Result<MetricsReport> {
    let (xt, yt) = dataset.part(Split::Train);
    let (xv, yv) = dataset.part(Split::Val);
    let (xs, ys) = dataset.part(Split::Test);
    if xs.nrows() == 0 {
        return Err(Error::domain("test split is empty"));
    }
    let m = &ck.model;
    let (ft, fv, fs_) = (m.features(&xt)?, m.features(&xv)?, m.features(&xs)?);
    let probe = linear_eval((&ft, &yt), (&fv, &yv), eval)?;
    let (scores, pred) = probe.predict(&fs_);
    let prr = if m.stage == Stage::Head {
        measure_prr(m, &xs, &ys, ck.loss, &ck.loss_config, ck.train_config.batch_size)?
    } else {
        None
    };
    MetricsReport::compute(&pred, &scores, &ys, Some(fs_.view()), prr)
}

/// Trains `id` with `seed` and evaluates it.
pub fn train_and_evaluate(cfg: &ExperimentConfig, dataset: &MultiLabelDataset, id: LossId, seed: u64) -> Result<(Checkpoint, MetricsReport)> {
    let tcfg = cfg.train_config(seed);
    let out = train(dataset, id, &cfg.loss, &tcfg)?;
    let ck = Checkpoint::new(id, &cfg.loss, &tcfg, out);
    let report = evaluate_checkpoint(&ck, dataset, &cfg.eval)?;
    Ok((ck, report))
}

/// Writes the dataset to `<out>/dataset.txt`.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.prepare_out()?;
    let path = dir.join("dataset.txt");
    write_dataset(&generate_longtail(&cfg.data)?, &path)?;
    Ok(path)
}

/// Gradient-check reports; the caller decides the exit status from `pass`.
pub fn cmd_gradcheck(cfg: &ExperimentConfig, id: LossId, trials: usize, seed: u64) -> Result<Vec<GradCheckReport>> {
    cfg.loss.validate()?;
    check_gradients(id, trials, cfg.run.gradcheck_tol, seed, &cfg.loss)
}

/// Trains `run.loss` with the first seed; writes `checkpoint.json` and `train_log.csv`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Checkpoint> {
    let dir = cfg.prepare_out()?;
    let dataset = cfg.dataset()?;
    let tcfg = cfg.train_config(cfg.run.seeds[0]);
    let out = train(&dataset, cfg.run.loss, &cfg.loss, &tcfg)?;
    let ck = Checkpoint::new(cfg.run.loss, &cfg.loss, &tcfg, out);
    ck.write(dir.join("checkpoint.json"))?;
    fs::write(dir.join("train_log.csv"), log_csv(&ck.log))?;
    Ok(ck)
}

/// Evaluates a checkpoint; writes `metrics.json`.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, dataset: &MultiLabelDataset) -> Result<MetricsReport> {
    let dir = cfg.prepare_out()?;
    let ck = Checkpoint::read(checkpoint)?;
    let report = evaluate_checkpoint(&ck, dataset, &cfg.eval)?;
    fs::write(dir.join("metrics.json"), report.to_json() + "\n")?;
    Ok(report)
}

/// Per-seed metrics of one loss.
#[derive(Debug, Clone)]
pub struct LossRuns {
    pub loss: LossId,
    pub runs: Vec<(u64, MetricsReport)>,
}

const COMPARE_METRICS: [&str; 6] = ["micro_f1", "macro_f1", "hamming_x1000", "map", "align", "uniform"];

fn metric(r: &MetricsReport, name: &str) -> Option<f64> {
    match name {
        "micro_f1" => Some(r.micro_f1),
        "macro_f1" => Some(r.macro_f1),
        "hamming_x1000" => Some(r.hamming_x1000),
        "map" => r.map,
        "align" => r.align,
        "uniform" => r.uniform,
        _ => None,
    }
}

/// Summary table: one row per loss, `mean` and `std` columns per metric.
pub fn compare_csv(results: &[LossRuns]) -> String {
    let mut header = vec!["loss".to_string(), "seeds".to_string()];
    for m in COMPARE_METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    let mut out = header.join(",") + "\n";
    for lr in results {
        let mut row = vec![lr.loss.to_string(), lr.runs.len().to_string()];
        for m in COMPARE_METRICS {
            let values: Vec<f64> = lr.runs.iter().filter_map(|(_, r)| metric(r, m)).collect();
            let (mean, std) = mean_std(&values).unzip();
            row.push(opt_num(mean));
            row.push(opt_num(std));
        }
        out += &(row.join(",") + "\n");
    }
    out
}

/// Per-seed table behind [`compare_csv`].
pub fn runs_csv(results: &[LossRuns]) -> String {
    let mut out = format!("loss,seed,{},prr\n", COMPARE_METRICS.join(","));
    for lr in results {
        for (seed, r) in &lr.runs {
            let cells: Vec<String> = COMPARE_METRICS.iter().map(|m| opt_num(metric(r, m))).collect();
            out += &format!("{},{seed},{},{}\n", lr.loss, cells.join(","), opt_num(r.prr));
        }
    }
    out
}

/// Trains and evaluates every loss of `run.losses` for every seed; writes
/// `compare.csv` and `compare_runs.csv`.
pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<Vec<LossRuns>> {
    let dir = cfg.prepare_out()?;
    let dataset = cfg.dataset()?;
    let mut results = Vec::new();
    for &id in &cfg.run.losses {
        let mut runs = Vec::new();
        for &seed in &cfg.run.seeds {
            runs.push((seed, train_and_evaluate(cfg, &dataset, id, seed)?.1));
        }
        results.push(LossRuns { loss: id, runs });
    }
    fs::write(dir.join("compare.csv"), compare_csv(&results))?;
    fs::write(dir.join("compare_runs.csv"), runs_csv(&results))?;
    Ok(results)
}

/// Trains `run.loss` (first seed) at each temperature of `run.taus` and
/// reports the PRR averaged over the training epochs; writes `sweep_tau.csv`.
pub fn cmd_sweep_tau(cfg: &ExperimentConfig) -> Result<Vec<(f64, Option<f64>)>> {
    let dir = cfg.prepare_out()?;
    let id = cfg.run.loss;
    if !id.is_contrastive() {
        return Err(Error::config(format!("sweep-tau needs a contrastive loss, got `{id}`")));
    }
    let dataset = cfg.dataset()?;
    let tcfg = cfg.train_config(cfg.run.seeds[0]);
    let mut rows = Vec::new();
    for &tau in &cfg.run.taus {
        let lc = LossConfig { tau, ..cfg.loss.clone() };
        let log = train(&dataset, id, &lc, &tcfg)?.log;
        let per_epoch: Vec<f64> = log.iter().filter_map(|r| r.prr).collect();
        rows.push((tau, mean_std(&per_epoch).map(|(m, _)| m)));
    }
    let mut csv = String::from("tau,prr\n");
    for (tau, prr) in &rows {
        csv += &format!("{},{}\n", num(*tau), opt_num(*prr));
    }
    fs::write(dir.join("sweep_tau.csv"), csv)?;
    Ok(rows)
}

/// Seeded subset of the training split: the first `⌈f · n⌉` indices of a
/// permutation, kept in ascending order.
pub fn train_subset(dataset: &MultiLabelDataset, fraction: f64, seed: u64) -> MultiLabelDataset {
    let n = dataset.split.train;
    let keep = ((fraction * n as f64).ceil() as usize).clamp(1, n.max(1));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(keep);
    idx.sort_unstable();
    dataset.with_train_subset(&idx)
}

/// Macro-F1 (mean over seeds) of every loss at every training fraction;
/// writes `fraction.csv`.
pub fn cmd_fraction(cfg: &ExperimentConfig) -> Result<Vec<(f64, LossId, f64)>> {
    let dir = cfg.prepare_out()?;
    let dataset = cfg.dataset()?;
    let mut rows = Vec::new();
    for &fraction in &cfg.run.fractions {
        for &id in &cfg.run.losses {
            let mut scores = Vec::new();
            for &seed in &cfg.run.seeds {
                let subset = train_subset(&dataset, fraction, seed);
                scores.push(train_and_evaluate(cfg, &subset, id, seed)?.1.macro_f1);
            }
            rows.push((fraction, id, mean_std(&scores).expect("seeds non-empty").0));
        }
    }
    let mut csv = String::from("fraction,loss,macro_f1\n");
    for (f, id, m) in &rows {
        csv += &format!("{},{id},{}\n", num(*f), num(*m));
    }
    fs::write(dir.join("fraction.csv"), csv)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_echo_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_dotted();
        assert!(text.contains("loss.tau = 0.1\n"));
        assert!(text.contains("run.loss = \"reg\"\n"));
        assert!(text.lines().all(|l| !l.starts_with('[')));
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn dotted_overrides_and_errors() {
        let cfg = ExperimentConfig::from_toml("loss.tau = 0.5\nrun.losses = [\"msc\"]\ntrain.epochs = 2").unwrap();
        assert_eq!(cfg.loss.tau, 0.5);
        assert_eq!(cfg.run.losses, vec![LossId::Msc]);
        assert_eq!(cfg.train.epochs, 2);
        let custom = ExperimentConfig::from_toml(&cfg.to_dotted()).unwrap();
        assert_eq!(custom, cfg);
        for bad in ["loss.tua = 1.0", "run.loss = \"focal\"", "loss.tau = -1.0", "run.seeds = []", "x = ["] {
            assert!(matches!(ExperimentConfig::from_toml(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn mean_std_conventions() {
        assert_eq!(mean_std(&[]), None);
        assert_eq!(mean_std(&[2.0]), Some((2.0, 0.0)));
        assert_eq!(mean_std(&[1.0, 3.0]), Some((2.0, 2f64.sqrt())));
    }

    #[test]
    fn subsets_are_seeded_and_sized() {
        let data = generate_longtail(&GeneratorConfig {
            n: 100,
            ..Default::default()
        })
        .unwrap();
        let a = train_subset(&data, 0.2, 1);
        assert_eq!(a.split.train, 10);
        assert_eq!(a.split.val, data.split.val);
        assert_eq!(a, train_subset(&data, 0.2, 1));
        let full = train_subset(&data, 1.0, 5);
        assert_eq!((full.features, full.labels, full.split), (data.features, data.labels, data.split));
    }
}
