//! Run configuration documents and the file-producing run executor.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::SampleBatch;
use crate::checkpoint::Checkpoint;
use crate::data::EndpointDistribution;
use crate::error::{Error, Result};
use crate::eval::{write_metrics_csv, MetricRecord};
use crate::io::{format_sig9, write_points_csv};
use crate::sim::{simulate_batch, write_trajectories_csv, Direction, TimeGrid};
use crate::uba::{run, RunOutput, UbaConfig};

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "BRIDGEKIT_SEED";

fn default_sample_times() -> Vec<f64> {
    vec![1.0]
}

fn default_true() -> bool {
    true
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("bridgekit-out")
}

/// Which files a run writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportConfig {
    /// One `samples_t{T}.csv` per entry: the forward model simulated from
    /// the held-out source set up to time `T`.
    #[serde(default = "default_sample_times")]
    pub sample_times: Vec<f64>,
    /// Number of forward trajectories written to `trajectories.csv`
    /// (0 disables the file).
    #[serde(default)]
    pub trajectories: usize,
    #[serde(default = "default_true")]
    pub metrics: bool,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self {
            sample_times: default_sample_times(),
            trajectories: 0,
            metrics: true,
        }
    }
}

/// A complete run: driver settings, endpoint distributions and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub uba: UbaConfig,
    pub source: EndpointDistribution,
    pub target: EndpointDistribution,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub export: ExportConfig,
}

impl RunConfig {
    pub fn new(uba: UbaConfig, source: EndpointDistribution, target: EndpointDistribution) -> Self {
        Self {
            uba,
            source,
            target,
            output_dir: default_output_dir(),
            export: ExportConfig::default(),
        }
    }

    /// Parses and validates a JSON document; every failure is a
    /// configuration error.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.uba.validate()?;
        self.source.validate()?;
        self.target.validate()?;
        for t in &self.export.sample_times {
            if !(0.0..=1.0).contains(t) {
                return Err(Error::Config(format!("sample time {t} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Applies a `BRIDGEKIT_SEED`-style override.
    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.uba.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}")))?;
        }
        Ok(())
    }
}

/// Files written by [`execute`].
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub output: RunOutput,
    pub files: Vec<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn sim_steps(t: f64, total: usize) -> usize {
    ((t * total as f64).round() as usize).max(1)
}

/// Runs the driver and writes `metrics.csv`, `samples_t{T}.csv`, the
/// optional `trajectories.csv` and `checkpoint` into `output_dir`.
pub fn execute(config: &RunConfig) -> Result<RunArtifacts> {
    config.validate()?;
    let output = run(&config.uba, &config.source, &config.target)?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();

    if config.export.metrics {
        let path = dir.join("metrics.csv");
        write_metrics(&output.history, &path)?;
        files.push(path);
    }

    let sigma = config.uba.diffusion.sigma;
    let dim = config.uba.diffusion.dim;
    let mut export_rng = ChaCha8Rng::seed_from_u64(config.uba.seed);
    export_rng.set_stream(3);
    let source = &output.eval_sets.source;
    for &t in &config.export.sample_times {
        let points = if t == 0.0 {
            source.clone()
        } else {
            let grid = TimeGrid::new(sim_steps(t, config.uba.sim_steps_eval), 0.0, t)?;
            simulate_batch(&output.state.forward.net, source, sigma, &grid, &mut export_rng, false)?.terminal
        };
        let path = dir.join(format!("samples_t{}.csv", format_sig9(t)));
        let mut out = create(&path)?;
        write_points_csv(points.points(), dim, &mut out)?;
        out.flush()?;
        files.push(path);
    }

    if config.export.trajectories > 0 {
        let k = config.export.trajectories.min(source.len());
        let starts = source.select(&(0..k).collect::<Vec<_>>());
        let grid = Direction::Forward.grid(config.uba.sim_steps_eval);
        let sim = simulate_batch(&output.state.forward.net, &starts, sigma, &grid, &mut export_rng, true)?;
        let path = dir.join("trajectories.csv");
        let mut out = create(&path)?;
        write_trajectories_csv(&sim.trajectories.unwrap_or_default(), &mut out)?;
        out.flush()?;
        files.push(path);
    }

    let checkpoint = Checkpoint {
        config: config.clone(),
        forward: output.state.forward.net.clone(),
        reverse: output.state.reverse.as_ref().map(|s| s.net.clone()),
    };
    let path = dir.join("checkpoint");
    checkpoint.save(&path)?;
    files.push(path);
    Ok(RunArtifacts { output, files })
}

pub fn write_metrics(records: &[MetricRecord], path: &Path) -> Result<()> {
    let mut out = create(path)?;
    write_metrics_csv(records, &mut out)?;
    out.flush()?;
    Ok(())
}

fn direction_parts(checkpoint: &Checkpoint, direction: Direction) -> Result<(&EndpointDistribution, &crate::net::DriftNetwork)> {
    let cfg = &checkpoint.config;
    match direction {
        Direction::Forward => Ok((&cfg.source, &checkpoint.forward)),
        Direction::Reverse => Ok((
            &cfg.target,
            checkpoint
                .reverse
                .as_ref()
                .ok_or_else(|| Error::Config("checkpoint has no reverse network (only dsbm runs train one)".into()))?,
        )),
    }
}

fn sampling_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(4);
    rng
}

/// The `n` starting points [`sample_checkpoint`] simulates from: draws of π0
/// (forward) or π1 (reverse).
pub fn checkpoint_start_points(checkpoint: &Checkpoint, n: usize, direction: Direction, seed: u64) -> Result<SampleBatch> {
    let (dist, _) = direction_parts(checkpoint, direction)?;
    if n == 0 {
        return SampleBatch::new(ndarray::Array2::zeros((0, checkpoint.config.uba.diffusion.dim)));
    }
    dist.sample(n, &mut sampling_rng(seed))
}

/// Draws `n` endpoint samples from a checkpoint: source points from π0
/// simulated forward, or (`reverse`) target points from π1 simulated back
/// with the reverse network.
pub fn sample_checkpoint(checkpoint: &Checkpoint, n: usize, direction: Direction, seed: u64) -> Result<SampleBatch> {
    let cfg = &checkpoint.config;
    let (dist, net) = direction_parts(checkpoint, direction)?;
    if n == 0 {
        return SampleBatch::new(ndarray::Array2::zeros((0, cfg.uba.diffusion.dim)));
    }
    let mut rng = sampling_rng(seed);
    let start = dist.sample(n, &mut rng)?;
    let grid = direction.grid(cfg.uba.sim_steps_eval);
    Ok(simulate_batch(net, &start, cfg.uba.diffusion.sigma, &grid, &mut rng, false)?.terminal)
}
