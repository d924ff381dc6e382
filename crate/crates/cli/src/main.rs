//! `qcm`: quantiled conditional moments from the command line.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 when the
//! estimation itself fails.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qcm_core::caviar::Family;
use qcm_core::dgp::DgpKind;
use qcm_core::io::InputMode;
use qcm_core::pipeline::ConstraintPolicy;
use qcm_core::QcmError;

#[derive(Debug, Parser)]
#[command(name = "qcm", version, about = "Quantiled conditional variance, skewness and kurtosis")]
struct Cli {
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true, env = "QCM_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the QCM series of a price or return file.
    Compute(ComputeArgs),
    /// Monte Carlo accuracy campaign against a known data generating process.
    Simulate(SimulateArgs),
    /// News impact curves of a computed QCM series.
    Nic(NicArgs),
}

/// Pipeline settings shared by `compute` and `simulate`.
#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// DQ screening threshold p*.
    #[arg(long, default_value_t = 0.1)]
    pub pstar: f64,
    /// Quantile levels as start:step:end.
    #[arg(long, default_value = "0.01:0.01:0.99")]
    pub grid: String,
    #[arg(long, value_delimiter = ',', default_value = "sav,as,ig,adap")]
    pub families: Vec<Family>,
    /// `check` reports the moment constraint, `enforce` refits violations.
    #[arg(long, default_value = "check")]
    pub constraint: ConstraintPolicy,
    /// Random starting points per CAViaR fit.
    #[arg(long, default_value_t = 10_000)]
    pub n_random: usize,
}

#[derive(Debug, Args)]
pub struct ComputeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "prices")]
    pub mode: InputMode,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Add wall-clock timings to run.json (makes the file run-dependent).
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub dgp: DgpKind,
    /// Error cases 1–4, comma separated.
    #[arg(long = "case", value_delimiter = ',', default_value = "1,2,3,4")]
    pub cases: Vec<u8>,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 1000)]
    pub length: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NicArgs {
    /// The price or return file the QCMs were computed from.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "prices")]
    pub mode: InputMode,
    /// qcm.csv written by `qcm compute`.
    #[arg(long)]
    pub qcm: PathBuf,
    #[arg(long)]
    pub tar_order: usize,
    /// Keep insignificant TAR coefficients.
    #[arg(long)]
    pub no_prune: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(e: &QcmError) -> u8 {
    if e.is_estimation_failure() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads.filter(|&n| n > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("qcm: cannot set thread count: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Compute(a) => commands::compute(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Nic(a) => commands::nic(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qcm: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
