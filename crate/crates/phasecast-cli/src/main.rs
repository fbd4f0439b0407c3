//! `phasecast` — dataset generation, training, and evaluation for the
//! forecasting pipeline.
//!
//! Every subcommand reads one JSON job file; flags override only the
//! knobs that vary between otherwise identical invocations. Data
//! products go to stdout, progress and warnings to stderr, and any
//! error exits nonzero.

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use phasecast::cli::{cmd_eval, cmd_generate, cmd_grid, cmd_report, cmd_train, CmdOpts};
use phasecast::config::{self, EvalJob, GenerateJob, GridJob, ReportJob, TrainJob};

#[derive(Parser)]
#[command(name = "phasecast", version, about = "Simulate, train, and evaluate phase-space forecasters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Job description file (JSON).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Validate the job and print the plan without writing anything.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate dataset splits into an output directory.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Directory receiving one subdirectory per split.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Override the job's generator seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; 0 = all cores, 1 = sequential.
        #[arg(long)]
        workers: Option<usize>,
        /// Overwrite existing split directories.
        #[arg(long)]
        force: bool,
    },
    /// Train one model and persist its checkpoint and run record.
    Train {
        #[command(flatten)]
        common: Common,
        /// Run directory for record.json and checkpoint/.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Overwrite an existing run directory.
        #[arg(long)]
        force: bool,
    },
    /// Sweep a hyperparameter grid and persist every run.
    Grid {
        #[command(flatten)]
        common: Common,
        /// Sweep directory for grid.json plus per-run artifacts.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Overwrite an existing sweep directory.
        #[arg(long)]
        force: bool,
    },
    /// Score a checkpoint's closed-loop forecasts split by split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Override the job's rollout horizon.
        #[arg(long)]
        horizon: Option<usize>,
        /// Worker threads; 0 = all cores, 1 = sequential.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Aggregate a finished sweep into a CSV comparison table.
    Report {
        #[command(flatten)]
        common: Common,
        /// Write the CSV here instead of stdout.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Overwrite an existing report file.
        #[arg(long)]
        force: bool,
        /// Override the job's rollout horizon.
        #[arg(long)]
        horizon: Option<usize>,
        /// Worker threads; 0 = all cores, 1 = sequential.
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn run() -> phasecast::Result<()> {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let stderr = io::stderr();
    let mut out: Box<dyn Write> = Box::new(stdout.lock());
    let mut log: Box<dyn Write> = Box::new(stderr.lock());

    match cli.command {
        Command::Generate { common, out: out_dir, seed, workers, force } => {
            let job: GenerateJob = config::load_job(&common.config)?;
            let opts = CmdOpts { seed, workers, force, dry_run: common.dry_run, ..CmdOpts::default() };
            cmd_generate(&job, &out_dir, &opts, &mut *out, &mut *log)
        }
        Command::Train { common, out: out_dir, force } => {
            let job: TrainJob = config::load_job(&common.config)?;
            let opts = CmdOpts { force, dry_run: common.dry_run, ..CmdOpts::default() };
            cmd_train(&job, &out_dir, &opts, &mut *out, &mut *log)
        }
        Command::Grid { common, out: out_dir, force } => {
            let job: GridJob = config::load_job(&common.config)?;
            let opts = CmdOpts { force, dry_run: common.dry_run, ..CmdOpts::default() };
            cmd_grid(&job, &out_dir, &opts, &mut *out, &mut *log)
        }
        Command::Eval { common, horizon, workers } => {
            let job: EvalJob = config::load_job(&common.config)?;
            let opts = CmdOpts { horizon, workers, dry_run: common.dry_run, ..CmdOpts::default() };
            cmd_eval(&job, &opts, &mut *out, &mut *log)
        }
        Command::Report { common, out: out_file, force, horizon, workers } => {
            let job: ReportJob = config::load_job(&common.config)?;
            let opts = CmdOpts { horizon, workers, force, dry_run: common.dry_run, ..CmdOpts::default() };
            cmd_report(&job, out_file.as_deref(), &opts, &mut *out, &mut *log)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
