use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cta_cli::compare::cmd_compare;
use cta_cli::eval::cmd_eval;
use cta_cli::run::{cmd_run, summary};
use cta_cli::sweep::{cmd_sweep, Axis};
use cta_cli::{Failure, Overrides};

/// Cross-task alignment test-time training experiments.
#[derive(Parser)]
#[command(name = "cta", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run a single seed instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Sequential execution and no wall-clock fields in reports.
    #[arg(long)]
    deterministic: bool,
    /// `synthetic` or a directory of CTAT train/test tensors.
    #[arg(long)]
    data: Option<String>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            deterministic: self.deterministic,
            data: self.data.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train, align, adapt and evaluate every configured method.
    Run(Common),
    /// Repeat the run over values of one axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values; defaults depend on the axis.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        /// Parallel grid points.
        #[arg(long, env = "CTA_THREADS")]
        threads: Option<usize>,
    },
    /// Tabulate reports side by side with differences against the first.
    Compare {
        #[arg(required = true, num_args = 1..)]
        reports: Vec<PathBuf>,
        /// Comma-separated metric keys.
        #[arg(long, value_delimiter = ',')]
        metrics: Option<Vec<String>>,
        /// Compare at this adaptation iteration instead of the last.
        #[arg(long)]
        iteration: Option<usize>,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a stage checkpoint on source-test and target data.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file or stage directory.
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(common) => {
            let output = cmd_run(&common.config, &common.overrides())?;
            print!("{}", summary(&output));
        }
        Command::Sweep {
            common,
            axis,
            values,
            threads,
        } => {
            for (value, output) in cmd_sweep(&common.config, &common.overrides(), axis, values, threads)? {
                println!("{} = {value}", axis.name());
                print!("{}", summary(&output));
            }
        }
        Command::Compare {
            reports,
            metrics,
            iteration,
            out,
        } => {
            let cmp = cmd_compare(&reports, metrics, iteration, out.as_deref())?;
            print!("{}", cmp.to_text());
        }
        Command::Eval { common, checkpoint } => {
            let e = cmd_eval(&common.config, &common.overrides(), &checkpoint)?;
            println!("checkpoint       {}", e.checkpoint.display());
            println!("composition      {}", e.composition);
            println!("source accuracy  {:.4}", e.source_accuracy);
            println!("target accuracy  {:.4} ({})", e.target_accuracy, e.target);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
