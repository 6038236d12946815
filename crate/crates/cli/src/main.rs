//! `mlcl` command-line front end.
//!
//! Exit status: 0 on success, 1 on a failed check or runtime error, 2 on a
//! configuration error (unknown loss id, malformed or invalid config).

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use mlcl::data::read_dataset;
use mlcl::experiment::{
    cmd_compare, cmd_eval, cmd_fraction, cmd_gen_data, cmd_gradcheck, cmd_sweep_tau, cmd_train, compare_csv,
    ExperimentConfig,
};
use mlcl::losses::LossId;
use mlcl::training::log_csv;

#[derive(Parser, Debug)]
#[command(name = "mlcl", version, about = "Multi-label contrastive loss laboratory")]
struct Cli {
    /// Experiment config (TOML, flat dotted keys). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Single seed; replaces `run.seeds`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; replaces `run.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Loss id; replaces `run.loss` (and `run.losses` for compare and fraction).
    #[arg(long, global = true)]
    loss: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset into `<out>/dataset.txt`.
    GenData,
    /// Check analytic gradients against finite differences; prints JSON lines.
    Gradcheck {
        /// Loss id (defaults to `--loss` or `run.loss`).
        loss_id: Option<String>,
        /// Number of random batches (defaults to `run.gradcheck_trials`).
        trials: Option<usize>,
        /// Base seed (defaults to `--seed` or the first of `run.seeds`).
        seed: Option<u64>,
    },
    /// Train `run.loss`; writes checkpoint.json and train_log.csv.
    Train,
    /// Linear-probe evaluation of a checkpoint; writes metrics.json.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file (defaults to the config's dataset).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train and evaluate every loss in `run.losses` over all seeds; writes compare.csv.
    Compare,
    /// Average training PRR of `run.loss` for each temperature in `run.taus`; writes sweep_tau.csv.
    SweepTau,
    /// Macro-F1 per loss and training fraction in `run.fractions`; writes fraction.csv.
    Fraction,
}

fn parse_loss(s: &str) -> mlcl::Result<LossId> {
    s.parse()
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::from_toml(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seeds = vec![seed];
        cfg.train.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.run.out = out.to_string_lossy().into_owned();
    }
    if let Some(id) = &cli.loss {
        let id = parse_loss(id)?;
        cfg.run.loss = id;
        cfg.run.losses = vec![id];
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::GenData => {
            let path = cmd_gen_data(&cfg)?;
            println!("{}", path.display());
        }
        Command::Gradcheck { loss_id, trials, seed } => {
            let id = match loss_id {
                Some(s) => parse_loss(&s)?,
                None => cfg.run.loss,
            };
            let trials = trials.unwrap_or(cfg.run.gradcheck_trials);
            let seed = seed.unwrap_or(cfg.run.seeds[0]);
            let reports = cmd_gradcheck(&cfg, id, trials, seed)?;
            for r in &reports {
                println!("{}", r.to_json_line());
            }
            let failed = reports.iter().filter(|r| !r.pass).count();
            if failed > 0 {
                eprintln!("{failed} of {} trials failed for `{id}`", reports.len());
                return Ok(ExitCode::from(1));
            }
        }
        Command::Train => {
            let ck = cmd_train(&cfg)?;
            print!("{}", log_csv(&ck.log));
        }
        Command::Eval { checkpoint, dataset } => {
            let data = match dataset {
                Some(path) => read_dataset(&path).with_context(|| format!("reading {}", path.display()))?,
                None => cfg.dataset()?,
            };
            let report = cmd_eval(&cfg, &checkpoint, &data)?;
            println!("{}", report.to_json());
        }
        Command::Compare => {
            let results = cmd_compare(&cfg)?;
            print!("{}", compare_csv(&results));
        }
        Command::SweepTau => {
            println!("tau,prr");
            for (tau, prr) in cmd_sweep_tau(&cfg)? {
                println!("{tau:?},{}", prr.map(|p| format!("{p:?}")).unwrap_or_default());
            }
        }
        Command::Fraction => {
            println!("fraction,loss,macro_f1");
            for (fraction, id, macro_f1) in cmd_fraction(&cfg)? {
                println!("{fraction:?},{id},{macro_f1:?}");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            let config_error = matches!(
                err.downcast_ref::<mlcl::Error>(),
                Some(mlcl::Error::Config(_) | mlcl::Error::Parse { .. })
            );
            ExitCode::from(if config_error { 2 } else { 1 })
        }
    }
}
