use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bridgekit::acceptance::{run_checks, ALL_CHECKS, FAST_CHECKS};
use bridgekit::checkpoint::Checkpoint;
use bridgekit::config::{execute, sample_checkpoint, RunConfig, SEED_ENV};
use bridgekit::data::{eight_gaussians_default, EndpointDistribution};
use bridgekit::io::write_points_csv;
use bridgekit::sim::Direction;
use bridgekit::{Error, SampleBatch};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "bridgekit", version, about = "Train and sample diffusion bridges between two distributions")]
struct Cli {
    /// Worker threads for simulation and evaluation. Results do not depend
    /// on this value.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train according to a JSON run configuration and write its outputs.
    Run { config: PathBuf },
    /// Draw endpoint samples from a trained checkpoint.
    Sample {
        checkpoint: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value_t = Dir::Fwd)]
        direction: Dir,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in self-check suite.
    Check {
        /// Only the quick checks.
        #[arg(long)]
        fast: bool,
        /// Run just these check ids.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
    },
    /// Write samples of a toy dataset.
    Datasets {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Dimension of `standard-normal`.
        #[arg(long, default_value_t = 2)]
        dim: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Dir {
    Fwd,
    Rev,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    TwoMoons,
    Checkerboard,
    EightGaussians,
    StandardNormal,
}

/// Failure with its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Self {
            code: 2,
            message: e.to_string(),
        }
    }

    /// Configuration errors map to 2, everything else to 1.
    fn from_error(e: Error) -> Self {
        Self {
            code: if matches!(e, Error::Config(_)) { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn write_samples(batch: &SampleBatch, dim: usize, out: &Path) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(out).map_err(|e| Failure::from_error(e.into()))?);
    write_points_csv(batch.points(), dim, &mut w).map_err(Failure::from_error)?;
    w.flush().map_err(|e| Failure::from_error(e.into()))
}

fn cmd_run(path: &Path) -> Result<(), Failure> {
    let mut config = RunConfig::load(path).map_err(Failure::config)?;
    let seed = env_seed()?.map(|s| s.to_string());
    config.apply_seed_override(seed.as_deref()).map_err(Failure::config)?;
    let art = execute(&config).map_err(Failure::from_error)?;
    for f in &art.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_sample(checkpoint: &Path, n: usize, direction: Dir, out: &Path) -> Result<(), Failure> {
    let ck = Checkpoint::load(checkpoint)
        .map_err(|e| Failure::config(format!("cannot load checkpoint {}: {e}", checkpoint.display())))?;
    let seed = env_seed()?.unwrap_or(ck.config.uba.seed);
    let direction = match direction {
        Dir::Fwd => Direction::Forward,
        Dir::Rev => Direction::Reverse,
    };
    let batch = sample_checkpoint(&ck, n, direction, seed).map_err(Failure::from_error)?;
    write_samples(&batch, ck.config.uba.diffusion.dim, out)
}

fn cmd_check(fast: bool, only: &[u32]) -> bool {
    let ids: &[u32] = if !only.is_empty() {
        only
    } else if fast {
        &FAST_CHECKS
    } else {
        &ALL_CHECKS
    };
    let results = run_checks(ids, |r| println!("{r}"));
    let failed = results.iter().filter(|r| !r.passed).count();
    let total: f64 = results.iter().map(|r| r.elapsed.as_secs_f64()).sum();
    println!("{} passed, {failed} failed, {total:.1}s", results.len() - failed);
    failed == 0
}

fn cmd_datasets(kind: Kind, n: usize, dim: usize, out: &Path) -> Result<(), Failure> {
    let dist = match kind {
        Kind::TwoMoons => EndpointDistribution::TwoMoons { noise: 0.05 },
        Kind::Checkerboard => EndpointDistribution::Checkerboard,
        Kind::EightGaussians => eight_gaussians_default(),
        Kind::StandardNormal => EndpointDistribution::standard_normal(dim),
    };
    let dim = dist.dim().map_err(Failure::config)?;
    let batch = if n == 0 {
        SampleBatch::new(ndarray::Array2::zeros((0, dim))).map_err(Failure::from_error)?
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(env_seed()?.unwrap_or(0));
        dist.sample(n, &mut rng).map_err(Failure::from_error)?
    };
    write_samples(&batch, dim, out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads.max(1)).build_global() {
        eprintln!("error: thread pool: {e}");
        return ExitCode::from(1);
    }
    let result = match cli.command {
        Command::Run { config } => cmd_run(&config),
        Command::Sample {
            checkpoint,
            n,
            direction,
            out,
        } => cmd_sample(&checkpoint, n, direction, &out),
        Command::Check { fast, only } => {
            return if cmd_check(fast, &only) { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
        Command::Datasets { kind, n, out, dim } => cmd_datasets(kind, n, dim, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
