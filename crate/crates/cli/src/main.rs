//! `fcc`: experiments, proposition checks and the `.fcc` codec.

mod check;
mod codec_cmd;
mod experiment;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::experiment::Tolerances;
use crate::output::{decades_arg, grid_arg, CliError, CliResult, Grid, OutDir};

#[derive(Parser)]
#[command(name = "fcc", version, about = "Finite-codebook complexity experiments and checks")]
struct Cli {
    /// Directory for CSV, JSON and .fcc outputs.
    #[arg(long, global = true, default_value = "fcc-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Model-selection experiments.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
    /// Numeric checks of the coding-length propositions.
    #[command(subcommand)]
    Check(CheckCmd),
    /// Encode or decode `.fcc` two-part-code files.
    #[command(subcommand)]
    Codec(CodecCmd),
}

#[derive(clap::Args)]
struct SeedArgs {
    /// Number of seeds.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    /// Fraction of seeds that must satisfy each majority check.
    #[arg(long, default_value_t = 0.8)]
    min_agreement: f64,
    /// Largest accepted NLL gap to the full grid, bits per sample.
    #[arg(long, default_value_t = 1.0)]
    max_gap: f64,
}

impl SeedArgs {
    fn seeds(&self) -> Vec<u64> {
        (self.seed_base..self.seed_base + self.seeds).collect()
    }

    fn tolerances(&self) -> Tolerances {
        Tolerances {
            min_agreement: self.min_agreement,
            max_gap: self.max_gap,
        }
    }
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// Sparse Poisson covariate shift over ten environments.
    CovariateShift {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        seeds: SeedArgs,
    },
    /// Linear-Gaussian causal versus anticausal selection.
    Bivariate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        seeds: SeedArgs,
    },
}

#[derive(Subcommand)]
enum CheckCmd {
    /// Tabular CBN versus joint-table model bits.
    Prop17 {
        #[arg(long, value_parser = grid_arg, default_value = "2..8")]
        m_grid: Grid,
        #[arg(long, value_parser = grid_arg, default_value = "3")]
        d: Grid,
        #[arg(long, default_value_t = 4)]
        n: u64,
        #[arg(long, default_value_t = 2)]
        envs: u64,
        #[arg(long)]
        max_final_ratio: Option<f64>,
    },
    /// Sparse versus direct mechanism selection, `A(k)`.
    Prop18 {
        #[arg(long = "M", default_value_t = 18)]
        pool: u64,
        /// Slot counts; `a..b` expands to decades.
        #[arg(long = "N", value_parser = decades_arg, default_value = "10..1000")]
        slots: Grid,
    },
    /// Invariant versus Markov model bits.
    Prop19 {
        #[arg(long, value_parser = grid_arg, default_value = "2..10")]
        m_grid: Grid,
        #[arg(long, default_value_t = 2)]
        orbits: u64,
        #[arg(long, default_value_t = 4)]
        n: u64,
        #[arg(long)]
        max_final_ratio: Option<f64>,
    },
    /// Bayes mixture versus best two-part code length.
    Bayes {
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum CodecCmd {
    /// JSON dataset to `.fcc`.
    Encode {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Shared mechanism pool for CompCBN models.
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// `.fcc` to JSON dataset.
    Decode {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        pool: Option<PathBuf>,
    },
}

fn thread_pool() -> CliResult<()> {
    let Ok(v) = std::env::var("FCC_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("FCC_THREADS={v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> CliResult<()> {
    thread_pool()?;
    match cli.command {
        Command::Experiment(cmd) => {
            let out = OutDir::create(&cli.out)?;
            match cmd {
                ExperimentCmd::CovariateShift { config, seeds } => {
                    experiment::covariate_shift(&config, &seeds.seeds(), &out, &seeds.tolerances())
                }
                ExperimentCmd::Bivariate { config, seeds } => {
                    experiment::bivariate(&config, &seeds.seeds(), &out, &seeds.tolerances())
                }
            }
        }
        Command::Check(cmd) => {
            let out = OutDir::create(&cli.out)?;
            match cmd {
                CheckCmd::Prop17 { m_grid, d, n, envs, max_final_ratio } => {
                    check::prop17(&m_grid.0, &d.0, n, envs, max_final_ratio, &out)
                }
                CheckCmd::Prop18 { pool, slots } => check::prop18(pool, &slots.0, &out),
                CheckCmd::Prop19 { m_grid, orbits, n, max_final_ratio } => {
                    check::prop19(&m_grid.0, orbits, n, max_final_ratio, &out)
                }
                CheckCmd::Bayes { trials, seed } => check::bayes(trials, seed, &out),
            }
        }
        Command::Codec(CodecCmd::Encode { input, output, pool }) => codec_cmd::encode(&input, output, pool.as_deref()),
        Command::Codec(CodecCmd::Decode { input, output, pool }) => codec_cmd::decode(&input, output, pool.as_deref()),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
