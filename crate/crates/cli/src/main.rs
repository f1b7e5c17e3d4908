//! `qbnb`: certified rigid registration of point clouds from the command line.
//!
//! Exit codes: 0 when every requested search converged, 2 when a search hit
//! its evaluation cap (or a pairwise cell failed), 1 on input errors.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{error::ErrorKind, Parser, Subcommand, ValueEnum};
use qbnb_core::{BoundKind, Mode, Strategy};

#[derive(Parser, Debug)]
#[command(name = "qbnb", version, about = "Globally optimal rigid point-cloud registration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Cp,
    Bijective,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Cp => Mode::ClosestPoint,
            ModeArg::Bijective => Mode::Bijective,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BoundArg {
    Quasi,
    Linear,
}

impl From<BoundArg> for BoundKind {
    fn from(b: BoundArg) -> Self {
        match b {
            BoundArg::Quasi => BoundKind::Quasi,
            BoundArg::Linear => BoundKind::Linear,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StrategyArg {
    Bfs,
    BestFirst,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Bfs => Strategy::Bfs,
            StrategyArg::BestFirst => Strategy::BestFirst,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Register a source cloud onto a target cloud.
    Register {
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, value_enum)]
        bound: BoundArg,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        allow_reflections: bool,
        /// Approximate closest points with an N^d distance-transform grid
        /// (cp mode only; the result is then not certified).
        #[arg(long, value_name = "N")]
        dt_grid: Option<usize>,
        /// Defaults to bfs for bijective and best-first for cp.
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        #[arg(long)]
        max_evals: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic registration pair.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// Sweep accuracy and noise over synthetic instances.
    Bench {
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, value_enum)]
        bound: BoundArg,
        #[arg(long, value_delimiter = ',', required = true)]
        epsilon_list: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        sigma_list: Vec<f64>,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        instances: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        dim: usize,
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        #[arg(long)]
        max_evals: Option<u64>,
        /// Also write one per-generation CSV per run next to `--out`.
        #[arg(long)]
        per_generation: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// All-pairs bijective distances between the `.xyz` clouds of a folder.
    Pairwise {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        allow_reflections: bool,
        #[arg(long)]
        out_prefix: PathBuf,
    },
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("RIGID_QBNB_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .map_err(|_| anyhow::anyhow!("RIGID_QBNB_THREADS must be a non-negative integer, got {value:?}"))?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let outcome = init_threads().and_then(|()| commands::run(cli.command));
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
