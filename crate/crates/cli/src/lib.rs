//! The `lensforge` command line.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on input errors
//! (unreadable or invalid files, unknown lenses, inapplicable mutations).
//! The worker thread count is read from `LENSFORGE_THREADS`.

use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::path::PathBuf;
use thiserror::Error;

mod commands;
pub mod config;

pub use commands::{non_dominated, toy_run, ParetoRow, ToyReport, PARETO_HEADER, TRACE_HEADER};
pub use config::RunConfig;

pub const THREADS_ENV: &str = "LENSFORGE_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lensforge", version, about = "Lens design by sampling and optimization")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct LensArgs {
    /// Bundled lens name (wide28, normal50, macro105, tele135) or prescription file.
    #[arg(long)]
    pub lens: String,
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub lens: LensArgs,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Log CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the best lens as a JSON prescription.
    #[arg(long)]
    pub best: Option<PathBuf>,
    /// Write an SVG cross-section of the best lens.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize a lens with the Restore sampler.
    Optimize {
        #[command(flatten)]
        run: RunArgs,
        /// Disable paraxial projection after mutations.
        #[arg(long)]
        no_projection: bool,
        /// Disable topology mutations.
        #[arg(long)]
        no_mutations: bool,
    },
    /// Reversible-jump Metropolis-Hastings baseline.
    BaselineMh {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Adam descent on every single-mutation neighbor.
    BaselineBrute {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Spot diagrams of the loss field points as CSV.
    Trace {
        #[command(flatten)]
        lens: LensArgs,
        /// Rays per field point.
        #[arg(long)]
        rays: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply one mutation, project it paraxially and print the residual.
    Project {
        #[command(flatten)]
        lens: LensArgs,
        /// add, remove, glue or split.
        #[arg(long)]
        mutation: String,
        /// Element slot or index the mutation acts on.
        #[arg(long, default_value_t = 0)]
        site: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the projected lens as a JSON prescription.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a toy problem and compare the visited histogram with its target.
    Toy {
        /// 1d, 2d or mixed.
        #[arg(long)]
        variant: String,
        #[arg(long, default_value_t = 100_000)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Histogram bins per axis.
        #[arg(long, default_value_t = 10)]
        bins: usize,
        /// Histogram CSV path; the distance report goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep loss weights and emit the non-dominated designs.
    Pareto {
        #[command(flatten)]
        lens: LensArgs,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Multipliers of the default spot weight.
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1,2,4")]
        spot_scales: Vec<f64>,
        /// Throughput weights.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        throughput_weights: Vec<f64>,
        /// Disable topology mutations.
        #[arg(long)]
        no_mutations: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// SVG cross-section with a meridional ray fan.
    Render {
        #[command(flatten)]
        lens: LensArgs,
        /// Rays per field point; 0 draws the lens only.
        #[arg(long, default_value_t = 7)]
        rays: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn thread_count() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Diagnostics go to stderr.
pub fn cli_dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("lensforge: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count()? {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    pool.install(|| commands::execute(cli.command))
}
