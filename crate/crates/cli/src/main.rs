//! `tcm`: corpus generation, training, evaluation, ablations, head sweeps and
//! parameter accounting for the temporal-channel attention classifier.

mod commands;
mod config;
mod log;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use tcm_core::data::Split;

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "tcm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override one config value, e.g. `--set train.lr=0.0005`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(&self.config, &self.overrides)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Eval,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Eval => Split::Eval,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Replace a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Train with early stopping and save the top-k averaged checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score one split with a checkpoint and report EER and min t-DCF.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "eval")]
        split: SplitArg,
        /// Scoring threads; overrides `eval.jobs`.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Train and evaluate every component-ablation variant.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate each head count in `sweep.heads`, with and without TCM.
    SweepHeads {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the parameter count and the TCM overhead.
    Params {
        #[command(flatten)]
        common: Common,
        /// Also write the report and resolved config here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { common, out, force } => commands::gen_data(&common.load()?, &out, force),
        Command::Train { common, data, out } => commands::train(&common.load()?, &data, &out),
        Command::Eval {
            common,
            checkpoint,
            data,
            out,
            split,
            jobs,
        } => {
            let mut cfg = common.load()?;
            if let Some(j) = jobs {
                cfg.eval.jobs = j;
            }
            commands::eval(&cfg, &checkpoint, &data, split.into(), &out)
        }
        Command::Ablate { common, data, out } => commands::ablate(&common.load()?, &data, &out),
        Command::SweepHeads { common, data, out } => commands::sweep_heads(&common.load()?, &data, &out),
        Command::Params { common, out } => commands::params(&common.load()?, out.as_deref()).map(|_| ()),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
