//! `statefuse`: generate synthetic trials, train and evaluate state
//! estimators, and run streaming inference.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use statefuse::models::{ModelKind, Mode};
use statefuse::Error;

use commands::{EvalArgs, GenerateArgs, StreamArgs, TrainArgs};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "statefuse", version, about = "Multi-modal surgical state estimation")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (one directory per trial plus index.json).
    Generate {
        /// suturing, rious or modality-exclusive
        #[arg(long)]
        task: Option<String>,
        /// Custom task file (JSON FSM); overrides --task.
        #[arg(long)]
        task_file: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model on a dataset and save its checkpoint into --out.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: ModelKind,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Leave-one-user-out evaluation, or scoring of saved checkpoints.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Rows to report; repeat or comma-separate. Defaults to all six.
        #[arg(long, value_delimiter = ',')]
        model: Vec<ModelKind>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Score these trained checkpoints instead of retraining per fold.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Read one frame per line (kinematics, vision, events comma-separated)
    /// from stdin and print one state per line.
    InferStream {
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long)]
        model: ModelKind,
        /// Report malformed lines and keep going.
        #[arg(long)]
        lenient: bool,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Numeric(_) => 4,
        _ => 3,
    }
}

fn required<T>(v: Option<T>, flag: &str) -> statefuse::Result<T> {
    v.ok_or_else(|| Error::config(format!("missing --{flag}")))
}

fn init_threads() -> statefuse::Result<()> {
    if let Ok(v) = std::env::var("STATEFUSE_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::config(format!("STATEFUSE_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> statefuse::Result<()> {
    init_threads()?;
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let seed = |s: Option<u64>| s.or(cfg.seed).unwrap_or(0);
    let mode = |m: Option<Mode>| m.or(cfg.mode).unwrap_or_default();
    match cli.command {
        Command::Generate { task, task_file, trials, users, seed: s, out } => commands::generate(
            GenerateArgs {
                task: task.or(cfg.task.clone()).unwrap_or_else(|| "rious".into()),
                task_file: task_file.or(cfg.task_file.clone()),
                trials,
                users,
                seed: seed(s),
                out: required(out.or(cfg.out.clone()), "out")?,
            },
            &cfg,
        ),
        Command::Train { data, model, mode: m, seed: s, out } => commands::train(
            TrainArgs {
                data: required(data.or(cfg.data.clone()), "data")?,
                model,
                mode: mode(m),
                seed: seed(s),
                out: required(out.or(cfg.out.clone()), "out")?,
            },
            &cfg,
        ),
        Command::Eval { data, model, mode: m, seed: s, out, checkpoints } => commands::eval(
            EvalArgs {
                data: required(data.or(cfg.data.clone()), "data")?,
                models: if model.is_empty() { ModelKind::ALL.to_vec() } else { model },
                mode: mode(m),
                seed: seed(s),
                out: required(out.or(cfg.out.clone()), "out")?,
                checkpoints,
            },
            &cfg,
        ),
        Command::InferStream { checkpoints, model, lenient } => {
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            commands::infer_stream(
                StreamArgs {
                    checkpoints: required(checkpoints.or(cfg.out.clone()), "checkpoints")?,
                    model,
                    lenient,
                },
                stdin.lock(),
                stdout.lock(),
            )
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
