//! Metrics and ground-truth oracles: energy distance, the conditional
//! expectation drift of a discrete coupling, a grid oracle for Gaussian
//! entropic OT and a path kinetic-energy estimator.

use std::io::Write;

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::SampleBatch;
use crate::bridge::{ConditionalDrift, PinnedPath};
use crate::coupling::{sinkhorn, squared_distances, Coupling};
use crate::data::Sampler;
use crate::error::{check_len, Error, Result};
use crate::io::format_sig9;
use crate::sim::{integrate_rows, simulate_batch, BatchDrift, StepObserver, TimeGrid, EVAL_SIM_STEPS};

/// One named scalar recorded at an outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iteration: usize,
    pub name: String,
    pub value: f64,
    pub std_error: Option<f64>,
}

impl MetricRecord {
    pub fn new(iteration: usize, name: impl Into<String>, value: f64) -> Self {
        Self {
            iteration,
            name: name.into(),
            value,
            std_error: None,
        }
    }

    pub fn with_std_error(mut self, se: f64) -> Self {
        self.std_error = Some(se);
        self
    }
}

/// Records as CSV `iteration,name,value,std_error`; a missing standard
/// error is an empty field.
pub fn write_metrics_csv<W: Write>(records: &[MetricRecord], mut out: W) -> Result<()> {
    writeln!(out, "iteration,name,value,std_error")?;
    for r in records {
        let se = r.std_error.map(format_sig9).unwrap_or_default();
        writeln!(out, "{},{},{},{se}", r.iteration, r.name, format_sig9(r.value))?;
    }
    Ok(())
}

/// Maximum batch size accepted by [`energy_distance`].
pub const ENERGY_DISTANCE_MAX_N: usize = 4096;

fn mean_pairwise_distance(a: ArrayView2<'_, f64>, wa: ArrayView1<'_, f64>, b: ArrayView2<'_, f64>, wb: ArrayView1<'_, f64>) -> f64 {
    let rows: Vec<f64> = (0..a.nrows())
        .into_par_iter()
        .map(|i| {
            let ai = a.row(i);
            let mut s = 0.0;
            for (j, bj) in b.rows().into_iter().enumerate() {
                let d2: f64 = ai.iter().zip(bj.iter()).map(|(p, q)| (p - q) * (p - q)).sum();
                s += wb[j] * d2.sqrt();
            }
            wa[i] * s
        })
        .collect();
    rows.iter().sum()
}

/// `2 E|A − B| − E|A − A'| − E|B − B'|` as a weighted V-statistic over all
/// pairs, so identical batches give exactly 0.
pub fn energy_distance(a: &SampleBatch, b: &SampleBatch) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Data("energy distance of an empty batch".into()));
    }
    check_len("energy distance dimension", a.dim(), b.dim())?;
    if a.len() > ENERGY_DISTANCE_MAX_N || b.len() > ENERGY_DISTANCE_MAX_N {
        return Err(Error::Data(format!(
            "energy distance supports at most {ENERGY_DISTANCE_MAX_N} points per batch"
        )));
    }
    let (wa, wb) = (a.weights(), b.weights());
    let ab = mean_pairwise_distance(a.points(), wa.view(), b.points(), wb.view());
    let aa = mean_pairwise_distance(a.points(), wa.view(), a.points(), wa.view());
    let bb = mean_pairwise_distance(b.points(), wb.view(), b.points(), wb.view());
    Ok(2.0 * ab - aa - bb)
}

/// Energy distance between disjoint same-size draws of one distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl Baseline {
    /// `mean + 3 std`.
    pub fn calibrated_threshold(&self) -> f64 {
        self.mean + 3.0 * self.std
    }
}

/// Repeats [`energy_distance`] on `reps` pairs of fresh `n`-point draws.
pub fn same_distribution_baseline<R: Rng + ?Sized>(
    sampler: &Sampler,
    n: usize,
    reps: usize,
    rng: &mut R,
) -> Result<Baseline> {
    if reps == 0 {
        return Err(Error::Domain("baseline needs at least one repetition".into()));
    }
    let mut values = Vec::with_capacity(reps);
    for _ in 0..reps {
        let a = sampler.sample(n, rng)?;
        let b = sampler.sample(n, rng)?;
        values.push(energy_distance(&a, &b)?);
    }
    let mean = values.iter().sum::<f64>() / reps as f64;
    let std = if reps > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (reps - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(Baseline { values, mean, std })
}

fn log_responsibilities(coupling: &Coupling, pinned: &PinnedPath, t: f64, x: &[f64]) -> Result<(Vec<(usize, usize)>, Vec<f64>)> {
    check_len("oracle query dimension", coupling.batch0().dim(), x.len())?;
    let gamma = pinned.std(t);
    if gamma <= 0.0 {
        return Err(Error::Domain(format!("pinned width is zero at t = {t}")));
    }
    let d = x.len() as f64;
    let norm = -0.5 * d * (2.0 * std::f64::consts::PI * gamma * gamma).ln();
    let mut pairs = Vec::new();
    let mut logs = Vec::new();
    for (i, j, mass) in coupling.support() {
        let x0 = coupling.batch0().row(i);
        let x1 = coupling.batch1().row(j);
        let (mean, _) = pinned.mean_std(x0.as_slice().expect("row"), x1.as_slice().expect("row"), t)?;
        let d2: f64 = mean.iter().zip(x).map(|(m, v)| (v - m) * (v - m)).sum();
        pairs.push((i, j));
        logs.push(mass.ln() + norm - d2 / (2.0 * gamma * gamma));
    }
    Ok((pairs, logs))
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log density at `x` of the mixture `P_t = Σ_k q_k N(μ_t(pair_k), γ_t² I)`.
pub fn mixture_log_density(coupling: &Coupling, pinned: &PinnedPath, t: f64, x: &[f64]) -> Result<f64> {
    let (_, logs) = log_responsibilities(coupling, pinned, t, x)?;
    Ok(log_sum_exp(&logs))
}

/// `E[u_t(x | x0, x1) | x_t = x]` for a discrete coupling: conditional
/// drifts averaged with posterior responsibilities of the pinned mixture.
pub fn marginal_drift_oracle(
    coupling: &Coupling,
    pinned: &PinnedPath,
    drift: &ConditionalDrift,
    t: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    let (pairs, logs) = log_responsibilities(coupling, pinned, t, x)?;
    let total = log_sum_exp(&logs);
    if !(total > f64::MIN_POSITIVE.ln()) {
        return Err(Error::DensityUnderflow { t });
    }
    let mut out = vec![0.0; x.len()];
    let mut u = vec![0.0; x.len()];
    for ((i, j), l) in pairs.iter().zip(&logs) {
        let r = (l - total).exp();
        if r == 0.0 {
            continue;
        }
        let x0 = coupling.batch0().row(*i);
        let x1 = coupling.batch1().row(*j);
        drift.eval_into(x, x0.as_slice().expect("row"), x1.as_slice().expect("row"), t, &mut u)?;
        for (o, v) in out.iter_mut().zip(&u) {
            *o += r * v;
        }
    }
    Ok(out)
}

/// Draws from the mixture `P_t`: pairs from the coupling, then exact pinned
/// samples at `t`.
pub fn sample_marginal<R: Rng + ?Sized>(
    coupling: &Coupling,
    pinned: &PinnedPath,
    t: f64,
    n: usize,
    rng: &mut R,
) -> Result<SampleBatch> {
    let pairs = coupling.sample_pairs(n, rng);
    let mut out = ndarray::Array2::<f64>::zeros((n, pairs.dim()));
    for (k, mut row) in out.rows_mut().into_iter().enumerate() {
        let x0 = pairs.x0.row(k);
        let x1 = pairs.x1.row(k);
        let s = pinned.sample(x0.as_slice().expect("row"), x1.as_slice().expect("row"), t, rng)?;
        row.assign(&ArrayView1::from(&s[..]));
    }
    SampleBatch::new(out)
}

/// Grid points per marginal used by [`gaussian_eot_oracle`].
pub const EOT_GRID_POINTS: usize = 512;
const EOT_GRID_HALF_WIDTH: f64 = 6.0;
const EOT_TOL: f64 = 1e-10;

/// Moments of the entropic plan between two 1D Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct EotMoments {
    pub cov01: f64,
    pub mean0: f64,
    pub mean1: f64,
    pub var0: f64,
    pub var1: f64,
    pub sinkhorn_iterations: usize,
}

fn gaussian_grid(mean: f64, var: f64, n: usize) -> (Array1<f64>, Array1<f64>) {
    let sd = var.sqrt();
    let lo = mean - EOT_GRID_HALF_WIDTH * sd;
    let h = 2.0 * EOT_GRID_HALF_WIDTH * sd / (n - 1) as f64;
    let x = Array1::from_shape_fn(n, |k| lo + k as f64 * h);
    let mut w = x.mapv(|v| (-(v - mean) * (v - mean) / (2.0 * var)).exp());
    let s = w.sum();
    w /= s;
    (x, w)
}

/// Entropic OT plan between `N(mean0, var0)` and `N(mean1, var1)` with
/// cost `|x0 − x1|²` and regularization `ε = 2 σ_ref²`, solved by Sinkhorn
/// on discretized marginals (`±6` standard deviations, [`EOT_GRID_POINTS`]
/// points each).
pub fn gaussian_eot_oracle(mean0: f64, var0: f64, mean1: f64, var1: f64, sigma_ref: f64) -> Result<EotMoments> {
    gaussian_eot_oracle_with_grid(mean0, var0, mean1, var1, sigma_ref, EOT_GRID_POINTS)
}

/// As [`gaussian_eot_oracle`] with an explicit grid size.
pub fn gaussian_eot_oracle_with_grid(
    mean0: f64,
    var0: f64,
    mean1: f64,
    var1: f64,
    sigma_ref: f64,
    n_grid: usize,
) -> Result<EotMoments> {
    if !(var0 > 0.0 && var1 > 0.0) {
        return Err(Error::Domain("oracle variances must be positive".into()));
    }
    if !(sigma_ref > 0.0) {
        return Err(Error::Domain("oracle needs sigma_ref > 0".into()));
    }
    if n_grid < 2 {
        return Err(Error::Domain("oracle grid needs at least two points".into()));
    }
    let (x0, a) = gaussian_grid(mean0, var0, n_grid);
    let (x1, b) = gaussian_grid(mean1, var1, n_grid);
    let cost = squared_distances(x0.view().insert_axis(ndarray::Axis(1)), x1.view().insert_axis(ndarray::Axis(1)));
    let opts = sinkhorn::SinkhornOptions {
        tol: EOT_TOL,
        max_iter: 100_000,
        checkpoint_every: 100,
    };
    let (plan, report) = sinkhorn::solve(cost.view(), a.view(), b.view(), 2.0 * sigma_ref * sigma_ref, &opts)?;
    let m0 = plan.sum_axis(ndarray::Axis(1)).dot(&x0);
    let m1 = plan.sum_axis(ndarray::Axis(0)).dot(&x1);
    let c0 = x0.mapv(|v| v - m0);
    let c1 = x1.mapv(|v| v - m1);
    Ok(EotMoments {
        cov01: c0.dot(&plan.dot(&c1)),
        mean0: m0,
        mean1: m1,
        var0: plan.sum_axis(ndarray::Axis(1)).dot(&c0.mapv(|v| v * v)),
        var1: plan.sum_axis(ndarray::Axis(0)).dot(&c1.mapv(|v| v * v)),
        sinkhorn_iterations: report.iterations,
    })
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

struct KineticObserver {
    per_row: Vec<f64>,
    h: f64,
}

impl StepObserver for KineticObserver {
    fn before_step(&mut self, _k: usize, _t: f64, _x: ArrayView2<'_, f64>, v: ArrayView2<'_, f64>) {
        for (acc, row) in self.per_row.iter_mut().zip(v.rows()) {
            *acc += row.dot(&row) * self.h;
        }
    }
}

/// `E ∫ |v_t(x_t)|² dt / (2 σ_ref²)` along trajectories of
/// `dx = v dt + σ_ref dW` started at `source`, by left-point sums.
pub fn path_kinetic_energy<D, R>(drift: &D, source: &SampleBatch, sigma_ref: f64, grid: &TimeGrid, rng: &mut R) -> Result<Estimate>
where
    D: BatchDrift + ?Sized,
    R: Rng + ?Sized,
{
    Ok(simulate_with_kinetic_energy(drift, source, sigma_ref, grid, rng)?.1)
}

/// One simulation under `dx = v dt + σ_ref dW` returning the terminal
/// states and the kinetic-energy estimate of [`path_kinetic_energy`].
pub fn simulate_with_kinetic_energy<D, R>(
    drift: &D,
    source: &SampleBatch,
    sigma_ref: f64,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<(SampleBatch, Estimate)>
where
    D: BatchDrift + ?Sized,
    R: Rng + ?Sized,
{
    let (terminal, values) = per_path_kinetic_energy(drift, source, sigma_ref, grid, rng)?;
    Ok((terminal, mean_and_se(&values)))
}

/// Terminal states and the kinetic energy of every simulated path, in
/// source-row order. Two drifts simulated with equally seeded `rng`s see the
/// same noise, which allows paired comparisons.
pub fn per_path_kinetic_energy<D, R>(
    drift: &D,
    source: &SampleBatch,
    sigma_ref: f64,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<(SampleBatch, Vec<f64>)>
where
    D: BatchDrift + ?Sized,
    R: Rng + ?Sized,
{
    if !(sigma_ref > 0.0) {
        return Err(Error::Domain("kinetic energy needs sigma_ref > 0".into()));
    }
    if source.is_empty() {
        return Err(Error::Data("kinetic energy of an empty batch".into()));
    }
    let seed: u64 = rng.random();
    let h = grid.dt().abs();
    let (terminal, observers) = integrate_rows(drift, source.points(), sigma_ref, grid, seed, |rows| KineticObserver {
        per_row: vec![0.0; rows],
        h,
    })?;
    let scale = 1.0 / (2.0 * sigma_ref * sigma_ref);
    let values: Vec<f64> = observers.into_iter().flat_map(|o| o.per_row).map(|v| v * scale).collect();
    Ok((SampleBatch::new(terminal)?, values))
}

/// Sample mean and its standard error.
pub fn mean_and_se(values: &[f64]) -> Estimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Estimate {
        value: mean,
        std_error: (var / n).sqrt(),
    }
}

/// Energy distance between the learned SDE's marginal at each `t` (started
/// from the coupling's `x0` marginal) and direct samples of the mixture `P_t`.
/// One record `marginal_ed_t{t}` per time.
#[allow(clippy::too_many_arguments)]
pub fn marginal_check<D, R>(
    drift: &D,
    pinned: &PinnedPath,
    coupling: &Coupling,
    sigma: f64,
    t_list: &[f64],
    n: usize,
    iteration: usize,
    rng: &mut R,
) -> Result<Vec<MetricRecord>>
where
    D: BatchDrift + ?Sized,
    R: Rng + ?Sized,
{
    let mut records = Vec::with_capacity(t_list.len());
    for &t in t_list {
        crate::bridge::check_time(t)?;
        let start = sample_marginal(coupling, pinned, 0.0, n, rng)?;
        let simulated = if t == 0.0 {
            start
        } else {
            let steps = ((t * EVAL_SIM_STEPS as f64).round() as usize).max(1);
            simulate_batch(drift, &start, sigma, &TimeGrid::new(steps, 0.0, t)?, rng, false)?.terminal
        };
        let reference = sample_marginal(coupling, pinned, t, n, rng)?;
        let ed = energy_distance(&simulated, &reference)?;
        records.push(MetricRecord::new(iteration, format!("marginal_ed_t{}", format_sig9(t)), ed));
    }
    Ok(records)
}
