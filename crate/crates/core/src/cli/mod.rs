//! `selfloc` command line: synth, partition, build-teacher, train, eval,
//! ablate and bench-latency.
//!
//! Exit codes: 0 on success, 2 for user or configuration errors, 1 for
//! internal failures.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::Error;
pub use config::{ConfigFile, ModelFlags};

#[derive(Debug, Parser)]
#[command(name = "selfloc", version, about = "Graph-convolutional place classification")]
pub struct Cli {
    /// TOML key-value file; command flags take precedence over its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate one JSON Lines traversal per season of a synthetic world.
    Synth {
        /// World spec (JSON, or TOML by extension).
        #[arg(long, conflicts_with = "reference", required_unless_present = "reference")]
        spec: Option<PathBuf>,
        /// Use the calibrated reference world.
        #[arg(long)]
        reference: bool,
        /// World seed; overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Build the place-class partition from training and test traversals.
    Partition {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cell_size: Option<f64>,
        #[arg(long)]
        min_images: Option<usize>,
    },
    /// Export per-role nearest-neighbor databases from the training traversal.
    BuildTeacher {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        partition: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated roles; defaults to every role of the first frame.
        #[arg(long, value_delimiter = ',')]
        roles: Option<Vec<String>>,
    },
    /// Train a GCN and write its checkpoint plus a loss-history CSV.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        partition: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Score a checkpoint on a test traversal.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        partition: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the single-view teacher baseline report here.
        #[arg(long)]
        baseline_out: Option<PathBuf>,
        #[arg(long)]
        baseline_role: Option<String>,
        /// Measure per-graph latency (sequential scoring).
        #[arg(long)]
        timing: bool,
    },
    /// Train and evaluate every cell of a configuration grid.
    Ablate {
        /// Grid file (TOML, or JSON by extension).
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        partition: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        timing: bool,
    },
    /// Time GCN classification of random MVIL graphs.
    BenchLatency {
        #[arg(long, default_value_t = 1000)]
        graphs: usize,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        #[arg(long, default_value_t = 3)]
        attributes: usize,
        #[arg(long, default_value_t = 86)]
        classes: usize,
        #[arg(long, default_value_t = 256)]
        hidden: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Internal(_) => 1,
        _ => 2,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli) -> crate::Result<()> {
    config::init_threads()?;
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    commands::dispatch(cli, &file)
}
