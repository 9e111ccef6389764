use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use looped_tf::programs::TaskId;
use looped_tf_cli::{
    cmd_eval, cmd_oracle_check, cmd_stopcurve, cmd_sweep, cmd_train, CliError, EvalCriterion,
};

#[derive(Parser)]
#[command(
    name = "looped-tf",
    about = "Train and evaluate looped transformers on algorithmic sequence tasks",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model from a config file (or resume from a checkpoint).
    Train {
        /// Config file (key = value lines).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Resume from an existing checkpoint instead.
        #[arg(long, conflicts_with = "config")]
        resume: Option<PathBuf>,
        /// Output directory (under $LOOPED_TF_OUT when relative).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the resolved config and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Exact-match accuracy per test length.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Evaluate the task's reference loop program instead of a model.
        #[arg(long, value_parser = parse_task)]
        reference: Option<TaskId>,
        /// Task sanity check against the checkpoint.
        #[arg(long, value_parser = parse_task)]
        task: Option<TaskId>,
        /// Comma-separated test lengths.
        #[arg(long, value_delimiter = ',', required = true)]
        lengths: Vec<usize>,
        /// Stopping rule: oracle, maxconf, or threshold.
        #[arg(long, default_value = "oracle", value_parser = parse_criterion)]
        criterion: EvalCriterion,
        /// Step cap for the confidence rules (default: 2T + 2).
        #[arg(long)]
        t_max: Option<usize>,
        /// Cross-entropy cutoff for the threshold rule.
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
        #[arg(long, default_value_t = 1024)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-step confidence and accuracy curve at one test length.
    Stopcurve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        length: usize,
        #[arg(long)]
        t_max: usize,
        #[arg(long, default_value_t = 256)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify the loop programs against the direct oracles.
    OracleCheck {
        /// parity, copy, or addition; all three when omitted.
        #[arg(long, value_parser = parse_task)]
        task: Option<TaskId>,
        #[arg(long, default_value_t = 10)]
        n_max: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and evaluate a grid of configs × seeds.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_task(s: &str) -> Result<TaskId, String> {
    TaskId::parse(s).ok_or_else(|| format!("unknown task {s:?}"))
}

fn parse_criterion(s: &str) -> Result<EvalCriterion, String> {
    EvalCriterion::parse(s).ok_or_else(|| format!("unknown criterion {s:?}"))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Train {
            config,
            resume,
            out,
            dry_run,
        } => cmd_train(config.as_deref(), resume.as_deref(), out.as_deref(), dry_run),
        Cmd::Eval {
            checkpoint,
            reference,
            task,
            lengths,
            criterion,
            t_max,
            threshold,
            samples,
            seed,
            out,
        } => cmd_eval(
            checkpoint.as_deref(),
            reference,
            task,
            &lengths,
            criterion,
            t_max,
            threshold,
            samples,
            seed,
            out.as_deref(),
        )
        .map(|_| ()),
        Cmd::Stopcurve {
            checkpoint,
            length,
            t_max,
            samples,
            seed,
            out,
        } => cmd_stopcurve(&checkpoint, length, t_max, samples, seed, out.as_deref()).map(|_| ()),
        Cmd::OracleCheck { task, n_max, seed } => cmd_oracle_check(task, n_max, seed).map(|_| ()),
        Cmd::Sweep { spec, out } => cmd_sweep(&spec, out.as_deref()).map(|_| ()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            // Bad arguments are configuration errors.
            eprint!("{e}");
            return ExitCode::from(1);
        }
        Err(e) => {
            // --help / --version.
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
