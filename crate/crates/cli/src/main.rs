//! One binary, four subcommands: gen-data | alphas | train | eval.
//!
//! Values resolve as flag > config file > documented default. Exit codes:
//! 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use alphagate::alpha::AlphaError;
use alphagate::model::{ModelError, ModelKind};
use alphagate::nn::NnError;
use alphagate::panel::PanelError;
use alphagate::train::{LossMode, TrainError};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "alphagate",
    version,
    about = "Formulaic-alpha research pipeline: synthesize panels, compute factors, train and evaluate return-sign models"
)]
struct Cli {
    /// TOML run config; omitted sections use the documented defaults
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a daily market panel and write it as panel.csv
    GenData(GenDataArgs),
    /// Evaluate the alpha library over the panel into factors.csv
    Alphas(AlphasArgs),
    /// Train one model (or all five) and write run artifacts
    Train(TrainArgs),
    /// Score a saved checkpoint on the test split
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of tickers [config default: 100]
    #[arg(long)]
    tickers: Option<usize>,
    /// Number of trading days [config default: 800]
    #[arg(long)]
    days: Option<usize>,
    /// Generator seed [config default: 7]
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [config default: runs/latest]
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AlphasArgs {
    /// Panel CSV to load instead of synthesizing
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// Alpha expression file [config default: alphas/default.txt]
    #[arg(long, value_name = "FILE")]
    expressions: Option<PathBuf>,
    /// Cross-sectionally z-score each factor [config default: true]
    #[arg(long)]
    standardize: Option<bool>,
    /// Output directory [config default: runs/latest]
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Model to train: linear | simple_mlp | stack_mlp | deep_mlp |
    /// gated_deep_mlp [config default: gated_deep_mlp]
    #[arg(long, conflicts_with = "all_models")]
    model: Option<String>,
    /// Train all five models into per-model subdirectories and print the
    /// comparison table
    #[arg(long)]
    all_models: bool,
    /// Panel CSV to load instead of synthesizing
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// Alpha expression file [config default: alphas/default.txt]
    #[arg(long, value_name = "FILE")]
    expressions: Option<PathBuf>,
    /// Training epochs [config default: 3]
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size for the bce loss [config default: 1024]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate [config default: 1e-3]
    #[arg(long)]
    lr: Option<f64>,
    /// Loss: bce | bce_plus_ic | ic_only [config default: bce]
    #[arg(long)]
    loss_mode: Option<String>,
    /// IC-term weight [config default: 0.1]
    #[arg(long)]
    lambda: Option<f64>,
    /// Run seed (weights, shuffles, validation draw) [config default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [config default: runs/latest]
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file written by `train`
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Panel CSV to load instead of synthesizing
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// Alpha expression file [config default: alphas/default.txt]
    #[arg(long, value_name = "FILE")]
    expressions: Option<PathBuf>,
    /// Output directory for scores.csv [config default: runs/latest]
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version print on stdout and succeed; real parse errors
            // are usage errors
            let code = if e.kind() == ErrorKind::DisplayHelp
                || e.kind() == ErrorKind::DisplayVersion
            {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_class(&err))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.config)?;
    match cli.cmd {
        Cmd::GenData(a) => {
            if let Some(v) = a.tickers {
                cfg.data.tickers = v;
            }
            if let Some(v) = a.days {
                cfg.data.days = v;
            }
            if let Some(v) = a.seed {
                cfg.data.seed = v;
            }
            if let Some(v) = a.out {
                cfg.output.dir = v;
            }
            commands::gen_data(&cfg, &cfg.output.dir)
        }
        Cmd::Alphas(a) => {
            if let Some(v) = a.data {
                cfg.data.source = Some(v);
            }
            if let Some(v) = a.expressions {
                cfg.alphas.expressions = v;
            }
            if let Some(v) = a.standardize {
                cfg.alphas.standardize = v;
            }
            if let Some(v) = a.out {
                cfg.output.dir = v;
            }
            commands::alphas(&cfg, &cfg.output.dir)
        }
        Cmd::Train(a) => {
            if let Some(v) = &a.model {
                cfg.model.kind = v
                    .parse::<ModelKind>()
                    .map_err(UsageError)
                    .context("--model")?;
            }
            if let Some(v) = a.data {
                cfg.data.source = Some(v);
            }
            if let Some(v) = a.expressions {
                cfg.alphas.expressions = v;
            }
            if let Some(v) = a.epochs {
                cfg.train.epochs = v;
            }
            if let Some(v) = a.batch_size {
                cfg.train.batch_size = v;
            }
            if let Some(v) = a.lr {
                cfg.train.lr = v;
            }
            if let Some(v) = &a.loss_mode {
                cfg.train.loss_mode = v
                    .parse::<LossMode>()
                    .map_err(UsageError)
                    .context("--loss-mode")?;
            }
            if let Some(v) = a.lambda {
                cfg.train.lambda = v;
            }
            if let Some(v) = a.seed {
                cfg.train.seed = v;
            }
            if let Some(v) = a.out {
                cfg.output.dir = v;
            }
            commands::train_cmd(&cfg, a.all_models)
        }
        Cmd::Eval(a) => {
            if let Some(v) = a.data {
                cfg.data.source = Some(v);
            }
            if let Some(v) = a.expressions {
                cfg.alphas.expressions = v;
            }
            if let Some(v) = a.out {
                cfg.output.dir = v;
            }
            commands::eval(&cfg, &a.checkpoint, &cfg.output.dir)
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).map_err(|e| {
                anyhow!(UsageError(format!(
                    "config {}: {}",
                    p.display(),
                    e.message()
                )))
            })
        }
        None => Ok(RunConfig::default()),
    }
}

/// Marks an error as a usage problem (exit 1) regardless of where it
/// surfaced.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// 1 usage, 2 data, 3 numeric.
fn exit_class(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(t) = cause.downcast_ref::<TrainError>() {
            return match t {
                TrainError::BadConfig(_) => 1,
                TrainError::NonFiniteLoss { .. }
                | TrainError::NonFiniteGrad { .. }
                | TrainError::SingleClass
                | TrainError::NonFiniteScore => 3,
                _ => 2,
            };
        }
        if let Some(p) = cause.downcast_ref::<PanelError>() {
            return match p {
                PanelError::BadConfig(_) | PanelError::BadHorizon { .. } => 1,
                _ => 2,
            };
        }
        if cause.downcast_ref::<AlphaError>().is_some() {
            return 2;
        }
        if let Some(m) = cause.downcast_ref::<ModelError>() {
            return match m {
                ModelError::Spec(_) | ModelError::NoFeatures => 1,
                ModelError::Nn(n) => nn_class(n),
                _ => 2,
            };
        }
        if let Some(n) = cause.downcast_ref::<NnError>() {
            return nn_class(n);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    2
}

fn nn_class(n: &NnError) -> u8 {
    match n {
        // shape conflicts mean the supplied data does not fit the model
        NnError::Shape { .. } => 2,
        _ => 3,
    }
}
