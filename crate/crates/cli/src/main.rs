use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nodecorr::pipeline::{Method, RunMode};
use nodecorr::verify::Fault;

mod commands;
mod output;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "NODECORR_OUT";
const DEFAULT_OUT: &str = "nodecorr-out";

#[derive(Parser)]
#[command(name = "nodecorr", version, about = "Train neural descent policies and apply incremental corrections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// Scenario file (TOML); defaults are used when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Comma-separated policy seeds.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seed: Vec<u64>,
    /// Override the final time, s.
    #[arg(long)]
    pub tf: Option<f64>,
    /// Output directory [default: $NODECORR_OUT or ./nodecorr-out].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Clone, Debug)]
pub struct CorrectArgs {
    #[command(flatten)]
    pub common: Common,
    /// Correction method; all three when omitted.
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long, default_value = "single")]
    pub mode: RunMode,
    /// Relative singular-value cutoff for the pseudoinverse.
    #[arg(long)]
    pub pinv_rtol: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FaultArg {
    PsiAsymmetry,
}

impl From<FaultArg> for Fault {
    fn from(f: FaultArg) -> Self {
        match f {
            FaultArg::PsiAsymmetry => Fault::PsiAsymmetry,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a baseline policy per seed.
    Train(Common),
    /// Baseline and corrected runs from the nominal initial state.
    Correct(CorrectArgs),
    /// Runs over the ring of perturbed initial positions.
    Ensemble(CorrectArgs),
    /// Run the self-check suite.
    Verify {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Corrupt an intermediate result to confirm the check fails.
        #[arg(long)]
        inject_fault: Option<FaultArg>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<nodecorr::Error> for Failure {
    fn from(e: nodecorr::Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

pub fn out_dir(explicit: &Option<PathBuf>) -> PathBuf {
    explicit
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn set_threads(threads: Option<usize>) -> Result<(), Failure> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(c) => set_threads(c.threads).and_then(|_| commands::train(&c)),
        Command::Correct(a) => set_threads(a.common.threads).and_then(|_| commands::correct(&a)),
        Command::Ensemble(a) => set_threads(a.common.threads).and_then(|_| commands::ensemble(&a)),
        Command::Verify { out, inject_fault, threads } => {
            set_threads(threads).and_then(|_| commands::verify(&out_dir(&out), inject_fault.map(Fault::from)))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
