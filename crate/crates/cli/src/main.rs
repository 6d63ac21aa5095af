//! `userloop` — rollouts, GRPO training, cold-start synthesis, evaluation,
//! metrics summaries and deterministic replay.
//!
//! Exit codes: 0 on success, 1 when a run fails, 2 on a usage error
//! (unknown subcommand or flag, unreadable or invalid configuration).

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::Overrides;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn run(e: impl std::fmt::Display) -> Self {
        CliError::Run(e.to_string())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Run(_) => 1,
            CliError::Usage(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "userloop",
    version,
    about = "Multi-turn tool-use agents: rollouts, GRPO training, synthesis and evaluation"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every subcommand; flags override the config file.
#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    group_size: Option<usize>,
    #[arg(long, global = true)]
    max_turns: Option<usize>,
    /// KL penalty coefficient.
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Ratio clipping range.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Domain: `toy`, `retail`, or a domain JSON file.
    #[arg(long, global = true)]
    env: Option<String>,
    /// Policy checkpoint for categorical rollouts.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run groups of rollouts and write them as trajectory JSONL.
    Rollout,
    /// Train the tabular policy with GRPO, writing metrics JSONL and checkpoints.
    Train {
        /// Continue from a checkpoint, appending to the existing metrics file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Synthesize and verify cold-start conversations, exporting accepted ones.
    Synth {
        /// Run offline against a recorded replay fixture instead of live models.
        #[arg(long)]
        replay: Option<PathBuf>,
        /// Judge reply used with `--replay`.
        #[arg(long, default_value = "ACCEPT replayed conversation")]
        judge_reply: String,
    },
    /// Score a trajectory file against the domain's tasks.
    Eval {
        #[arg(long)]
        trajectories: PathBuf,
    },
    /// Summarize a metrics JSONL file as a table.
    Metrics {
        #[arg(long)]
        input: PathBuf,
    },
    /// Re-execute recorded trajectories on a fresh environment and check
    /// that transcripts and final databases are identical.
    Replay {
        #[arg(long)]
        trajectories: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let flags = Overrides {
        seed: cli.common.seed,
        group_size: cli.common.group_size,
        max_turns: cli.common.max_turns,
        beta: cli.common.beta,
        epsilon: cli.common.epsilon,
        out: cli.common.out,
        env: cli.common.env,
        checkpoint: cli.common.checkpoint,
    };
    let resolved = config::resolve(cli.common.config.as_deref(), &flags)?;
    match cli.command {
        Command::Rollout => commands::rollout(&resolved),
        Command::Train { resume } => commands::train(&resolved, resume.as_deref()),
        Command::Synth { replay, judge_reply } => commands::synth(&resolved, replay.as_deref(), &judge_reply),
        Command::Eval { trajectories } => commands::eval(&resolved, &trajectories),
        Command::Metrics { input } => commands::metrics(&input),
        Command::Replay { trajectories } => commands::replay(&resolved, &trajectories),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests print to stdout and succeed; every
            // other parse failure is a usage error (exit 2).
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("run `userloop --help` for usage");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
