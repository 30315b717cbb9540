//! `calikit`: train, calibrate, and audit graph classifiers on
//! imbalanced node-classification datasets.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use calikit_core::error::Error;
use clap::{Args, Parser, Subcommand};

use commands::{Method, NodeSet};
use config::RunConfig;

/// A failed run, split by what the exit code should tell the caller:
/// bad invocation versus a failure while executing a valid one.
pub enum CliError {
    Usage(Error),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

pub type CmdResult = Result<(), CliError>;

#[derive(Parser)]
#[command(name = "calikit", version, about = "Calibration-aware graph classifier toolkit")]
struct Cli {
    /// JSON config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every randomness stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for leave-one-out solves (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory receiving all outputs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory holding edges.txt, features.csv, labels.txt.
    #[arg(long)]
    data: PathBuf,
    /// Reuse a saved split instead of deriving one from the seed.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Class treated as the rare one (default: the smallest).
    #[arg(long)]
    minority: Option<usize>,
    /// Training nodes per original class.
    #[arg(long = "lr-c")]
    label_rate: Option<usize>,
    #[arg(long)]
    val_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic block-model dataset.
    Gen {
        /// Comma-separated block sizes; each block is one class.
        #[arg(long, value_delimiter = ',', required = true)]
        blocks: Vec<usize>,
        /// Within-block edge probability.
        #[arg(long = "p-in", default_value_t = 0.1)]
        p_in: f64,
        /// Cross-block edge probability.
        #[arg(long = "p-out", default_value_t = 0.01)]
        p_out: f64,
        /// Feature dimension.
        #[arg(long, default_value_t = 8)]
        dim: usize,
        /// Distance between block feature means.
        #[arg(long, default_value_t = 2.0)]
        shift: f64,
    },
    /// Train a model and write its checkpoint and epoch log.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value_t = Method::Baseline)]
        method: Method,
        /// Calibration penalty weight for the joint method.
        #[arg(long)]
        lambda: Option<f64>,
        /// Epochs between uncertainty-target refreshes.
        #[arg(long)]
        refresh_every: Option<usize>,
        /// Epochs trained before the penalty engages.
        #[arg(long)]
        warmup: Option<usize>,
        /// Label-smoothing mix for that method.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Coverage level of the jackknife intervals.
        #[arg(long)]
        alpha: Option<f64>,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Jackknife uncertainty intervals for a trained checkpoint.
    Uncertainty {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Node subset to build intervals for.
        #[arg(long, value_enum, default_value_t = NodeSet::Val)]
        nodes: NodeSet,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Fit a softmax temperature on the validation split.
    Calibrate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Score a checkpoint on the test split and emit the full report.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Reliability and adaptive bin count.
        #[arg(long)]
        bins: Option<usize>,
        /// Apply a fitted softmax temperature before scoring.
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Grid of joint-training runs over coverage and penalty weight.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
        #[command(flatten)]
        flags: TrainFlags,
    },
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn apply_data_args(cfg: &mut RunConfig, data: &DataArgs) {
    if let Some(m) = data.minority {
        cfg.minority_class = Some(m);
    }
    if let Some(r) = data.label_rate {
        cfg.label_rate = r;
    }
    if let Some(v) = data.val_size {
        cfg.val_size = v;
    }
    if let Some(t) = data.test_size {
        cfg.test_size = t;
    }
}

fn apply_train_flags(cfg: &mut RunConfig, flags: &TrainFlags) {
    if let Some(h) = flags.hidden {
        cfg.train.hidden = h;
    }
    if let Some(lr) = flags.learning_rate {
        cfg.train.learning_rate = lr;
    }
    if let Some(wd) = flags.weight_decay {
        cfg.train.weight_decay = wd;
    }
    if let Some(d) = flags.dropout {
        cfg.train.dropout = d;
    }
    if let Some(e) = flags.max_epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(p) = flags.patience {
        cfg.train.patience = p;
    }
}

fn out_dir(cli: &Cli) -> Result<PathBuf, CliError> {
    cli.out.clone().ok_or_else(|| {
        CliError::Usage(Error::Domain("--out <dir> is required".into()))
    })
}

fn run(cli: Cli) -> CmdResult {
    let mut cfg = resolve_config(&cli)?;
    let out = out_dir(&cli)?;

    match &cli.command {
        Command::Gen {
            blocks,
            p_in,
            p_out,
            dim,
            shift,
        } => {
            cfg.finalize().map_err(CliError::Usage)?;
            commands::cmd_gen(&cfg, &out, blocks, *p_in, *p_out, *dim, *shift)
        }
        Command::Train {
            data,
            method,
            lambda,
            refresh_every,
            warmup,
            epsilon,
            alpha,
            flags,
        } => {
            apply_data_args(&mut cfg, data);
            apply_train_flags(&mut cfg, flags);
            if let Some(l) = lambda {
                cfg.lambda = *l;
            }
            if let Some(r) = refresh_every {
                cfg.refresh_every = *r;
            }
            if let Some(w) = warmup {
                cfg.warmup = *w;
            }
            if let Some(e) = epsilon {
                cfg.epsilon = *e;
            }
            if let Some(a) = alpha {
                cfg.coverage.coverage = *a;
            }
            cfg.finalize().map_err(CliError::Usage)?;
            commands::cmd_train(&cfg, &data.data, &out, *method, data.split.as_deref())
        }
        Command::Uncertainty {
            data,
            checkpoint,
            nodes,
            alpha,
        } => {
            apply_data_args(&mut cfg, data);
            if let Some(a) = alpha {
                cfg.coverage.coverage = *a;
            }
            cfg.finalize().map_err(CliError::Usage)?;
            commands::cmd_uncertainty(&cfg, &data.data, &out, checkpoint, *nodes, data.split.as_deref())
        }
        Command::Calibrate { data, checkpoint } => {
            apply_data_args(&mut cfg, data);
            cfg.finalize().map_err(CliError::Usage)?;
            commands::cmd_calibrate(&cfg, &data.data, &out, checkpoint, data.split.as_deref())
        }
        Command::Evaluate {
            data,
            checkpoint,
            bins,
            temperature,
            alpha,
        } => {
            apply_data_args(&mut cfg, data);
            if let Some(b) = bins {
                cfg.bins = *b;
            }
            if let Some(a) = alpha {
                cfg.coverage.coverage = *a;
            }
            cfg.finalize().map_err(CliError::Usage)?;
            commands::cmd_evaluate(&cfg, &data.data, &out, checkpoint, *temperature, data.split.as_deref())
        }
        Command::Sweep {
            data,
            alphas,
            lambdas,
            flags,
        } => {
            apply_data_args(&mut cfg, data);
            apply_train_flags(&mut cfg, flags);
            cfg.finalize().map_err(CliError::Usage)?;
            commands::cmd_sweep(&cfg, &data.data, &out, alphas, lambdas, data.split.as_deref())
        }
    }
}

fn exit_code(err: &CliError) -> u8 {
    match err {
        CliError::Usage(_) => 2,
        CliError::Run(e) => match e {
            Error::Parse { .. } | Error::Io { .. } => 3,
            Error::Numeric(_) | Error::Convergence { .. } | Error::Training { .. } => 4,
            _ => 3,
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        if workers > 0 {
            if let Err(e) = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build_global()
            {
                eprintln!("error: worker pool: {e}");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let inner = match &err {
                CliError::Usage(e) | CliError::Run(e) => e,
            };
            eprintln!("error: {inner}");
            ExitCode::from(exit_code(&err))
        }
    }
}
