//! Euler–Maruyama integration of learned or analytic drifts, forward and
//! in reverse time, and the couplings induced by simulating a model.
//!
//! Reverse-time integration runs the clock from `t_start = 1` down to
//! `t_end = 0`; the drift is expressed in the reverse clock, so every step
//! is `x += drift(t_k, x)·|Δt| + σ·sqrt(|Δt|)·z`.
//!
//! Noise for row `i` of a batch comes from its own ChaCha stream
//! (`seed`, stream `i`), consumed one step at a time. Rows are processed in
//! fixed-size chunks, so results do not depend on the worker count.

use std::io::Write;

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::SampleBatch;
use crate::coupling::{Coupling, CouplingKind};
use crate::error::{check_len, Error, Result};
use crate::io::format_sig9;
use crate::net::DriftNetwork;

/// Rows integrated together per drift evaluation.
const CHUNK_ROWS: usize = 256;

/// Default grid resolution while inducing training couplings.
pub const TRAIN_SIM_STEPS: usize = 200;
/// Default grid resolution for evaluation.
pub const EVAL_SIM_STEPS: usize = 1000;

/// Uniform time grid from `t_start` to `t_end` (either order).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    n_steps: usize,
    t_start: f64,
    t_end: f64,
}

impl TimeGrid {
    pub fn new(n_steps: usize, t_start: f64, t_end: f64) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::Domain("time grid needs at least one step".into()));
        }
        for t in [t_start, t_end] {
            crate::bridge::check_time(t)?;
        }
        if t_start == t_end {
            return Err(Error::Domain("time grid endpoints coincide".into()));
        }
        Ok(Self {
            n_steps,
            t_start,
            t_end,
        })
    }

    /// `0 → 1`.
    pub fn forward(n_steps: usize) -> Self {
        Self::new(n_steps, 0.0, 1.0).expect("valid grid")
    }

    /// `1 → 0`.
    pub fn reverse(n_steps: usize) -> Self {
        Self::new(n_steps, 1.0, 0.0).expect("valid grid")
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// Signed step.
    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / self.n_steps as f64
    }

    pub fn is_reverse(&self) -> bool {
        self.t_end < self.t_start
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_end
        } else {
            self.t_start + k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }
}

/// A path sample: states at every grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `(n_steps + 1, d)`.
    pub states: Array2<f64>,
}

impl Trajectory {
    pub fn terminal(&self) -> ndarray::ArrayView1<'_, f64> {
        self.states.row(self.states.nrows() - 1)
    }
}

/// A drift evaluated on a batch of states sharing one time.
pub trait BatchDrift: Sync {
    fn dim(&self) -> usize;
    fn drift_batch(&self, t: f64, x: ArrayView2<'_, f64>) -> Result<Array2<f64>>;
}

impl BatchDrift for DriftNetwork {
    fn dim(&self) -> usize {
        DriftNetwork::dim(self)
    }

    fn drift_batch(&self, t: f64, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.forward_at(t, x)
    }
}

/// Adapter turning a pointwise closure into a [`BatchDrift`].
pub struct FnDrift<F> {
    dim: usize,
    f: F,
}

impl<F> FnDrift<F>
where
    F: Fn(f64, &[f64]) -> Vec<f64> + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> BatchDrift for FnDrift<F>
where
    F: Fn(f64, &[f64]) -> Vec<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn drift_batch(&self, t: f64, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(x.raw_dim());
        for (k, row) in x.rows().into_iter().enumerate() {
            let v = (self.f)(t, &row.to_vec());
            check_len("drift output", self.dim, v.len())?;
            out.row_mut(k).assign(&Array1::from(v));
        }
        Ok(out)
    }
}

/// Single-trajectory Euler–Maruyama with noise drawn from `rng`.
pub fn euler_maruyama<F, R>(
    mut drift_fn: F,
    x_init: &[f64],
    sigma: f64,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
    R: Rng + ?Sized,
{
    let d = x_init.len();
    let h = grid.dt().abs();
    let noise = sigma * h.sqrt();
    let mut states = Array2::<f64>::zeros((grid.n_steps + 1, d));
    states.row_mut(0).assign(&ndarray::ArrayView1::from(x_init));
    let mut x = x_init.to_vec();
    for k in 0..grid.n_steps {
        let v = drift_fn(grid.time(k), &x);
        check_len("drift output", d, v.len())?;
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi += vi * h;
            if sigma != 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                *xi += noise * z;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: k + 1 });
        }
        states.row_mut(k + 1).assign(&ndarray::ArrayView1::from(&x[..]));
    }
    Ok(Trajectory {
        times: grid.times(),
        states,
    })
}

/// Per-step hook used by the batch integrator.
pub(crate) trait StepObserver: Send {
    /// Called before step `k` with the current states and their drifts.
    fn before_step(&mut self, _k: usize, _t: f64, _x: ArrayView2<'_, f64>, _v: ArrayView2<'_, f64>) {}
    /// Called after step `k` with the updated states.
    fn after_step(&mut self, _k: usize, _x: ArrayView2<'_, f64>) {}
}

struct NoObserver;
impl StepObserver for NoObserver {}

struct Recorder {
    /// `(n_steps + 1, rows, d)`.
    states: Array3<f64>,
}

impl StepObserver for Recorder {
    fn before_step(&mut self, k: usize, _t: f64, x: ArrayView2<'_, f64>, _v: ArrayView2<'_, f64>) {
        if k == 0 {
            self.states.index_axis_mut(Axis(0), 0).assign(&x);
        }
    }

    fn after_step(&mut self, k: usize, x: ArrayView2<'_, f64>) {
        self.states.index_axis_mut(Axis(0), k + 1).assign(&x);
    }
}

fn integrate_chunk<D: BatchDrift + ?Sized>(
    drift: &D,
    mut x: Array2<f64>,
    first_row: usize,
    sigma: f64,
    grid: &TimeGrid,
    seed: u64,
    observer: &mut dyn StepObserver,
) -> Result<Array2<f64>> {
    let h = grid.dt().abs();
    let noise = sigma * h.sqrt();
    let mut streams: Vec<ChaCha8Rng> = (0..x.nrows())
        .map(|r| {
            let mut g = ChaCha8Rng::seed_from_u64(seed);
            g.set_stream((first_row + r) as u64);
            g
        })
        .collect();
    for k in 0..grid.n_steps {
        let t = grid.time(k);
        let v = drift.drift_batch(t, x.view())?;
        check_len("drift batch output", x.ncols(), v.ncols())?;
        observer.before_step(k, t, x.view(), v.view());
        x.scaled_add(h, &v);
        if sigma != 0.0 {
            for (mut row, g) in x.rows_mut().into_iter().zip(streams.iter_mut()) {
                for xi in row.iter_mut() {
                    let z: f64 = g.sample(StandardNormal);
                    *xi += noise * z;
                }
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: k + 1 });
        }
        observer.after_step(k, x.view());
    }
    Ok(x)
}

/// Integrate every row of `init`, chunked and run on the rayon pool.
pub(crate) fn integrate_rows<D, O, F>(
    drift: &D,
    init: ArrayView2<'_, f64>,
    sigma: f64,
    grid: &TimeGrid,
    seed: u64,
    make_observer: F,
) -> Result<(Array2<f64>, Vec<O>)>
where
    D: BatchDrift + ?Sized,
    O: StepObserver,
    F: Fn(usize) -> O + Sync,
{
    check_len("initial state dimension", drift.dim(), init.ncols())?;
    let n = init.nrows();
    let starts: Vec<usize> = (0..n).step_by(CHUNK_ROWS).collect();
    let results: Vec<Result<(Array2<f64>, O)>> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + CHUNK_ROWS).min(n);
            let mut obs = make_observer(end - start);
            let x = integrate_chunk(
                drift,
                init.slice(s![start..end, ..]).to_owned(),
                start,
                sigma,
                grid,
                seed,
                &mut obs,
            )?;
            Ok((x, obs))
        })
        .collect();
    let mut terminal = Array2::<f64>::zeros(init.raw_dim());
    let mut observers = Vec::with_capacity(results.len());
    for (start, r) in starts.iter().zip(results) {
        let (x, obs) = r?;
        terminal.slice_mut(s![*start..*start + x.nrows(), ..]).assign(&x);
        observers.push(obs);
    }
    Ok((terminal, observers))
}

/// Result of [`simulate_batch`].
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub terminal: SampleBatch,
    pub trajectories: Option<Vec<Trajectory>>,
}

/// Euler–Maruyama over every row of `init` with independent per-row noise
/// streams derived from one draw of `rng`.
pub fn simulate_batch<D, R>(
    drift: &D,
    init: &SampleBatch,
    sigma: f64,
    grid: &TimeGrid,
    rng: &mut R,
    record: bool,
) -> Result<SimOutput>
where
    D: BatchDrift + ?Sized,
    R: Rng + ?Sized,
{
    let seed: u64 = rng.random();
    simulate_batch_seeded(drift, init, sigma, grid, seed, record)
}

/// As [`simulate_batch`] with an explicit stream seed.
pub fn simulate_batch_seeded<D>(
    drift: &D,
    init: &SampleBatch,
    sigma: f64,
    grid: &TimeGrid,
    seed: u64,
    record: bool,
) -> Result<SimOutput>
where
    D: BatchDrift + ?Sized,
{
    let d = init.dim();
    if !record {
        let (terminal, _) = integrate_rows(drift, init.points(), sigma, grid, seed, |_| NoObserver)?;
        return Ok(SimOutput {
            terminal: SampleBatch::new(terminal)?,
            trajectories: None,
        });
    }
    let steps = grid.n_steps;
    let (terminal, recorders) = integrate_rows(drift, init.points(), sigma, grid, seed, |rows| Recorder {
        states: Array3::zeros((steps + 1, rows, d)),
    })?;
    let times = grid.times();
    let mut trajectories = Vec::with_capacity(init.len());
    for rec in recorders {
        for r in 0..rec.states.shape()[1] {
            trajectories.push(Trajectory {
                times: times.clone(),
                states: rec.states.index_axis(Axis(1), r).to_owned(),
            });
        }
    }
    Ok(SimOutput {
        terminal: SampleBatch::new(terminal)?,
        trajectories: Some(trajectories),
    })
}

/// Which boundary a simulation starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// From `π0` at `t = 0` to `t = 1`.
    Forward,
    /// From `π1` at `t = 1` back to `t = 0`.
    Reverse,
}

impl Direction {
    pub fn grid(self, n_steps: usize) -> TimeGrid {
        match self {
            Direction::Forward => TimeGrid::forward(n_steps),
            Direction::Reverse => TimeGrid::reverse(n_steps),
        }
    }
}

/// Empirical coupling obtained by simulating each source point to the
/// opposite boundary: mass `1/n` on every simulated `(x0, x1)` pair.
pub fn model_coupling<D, R>(
    drift: &D,
    source: &SampleBatch,
    sigma: f64,
    n_steps: usize,
    direction: Direction,
    rng: &mut R,
) -> Result<Coupling>
where
    D: BatchDrift + ?Sized,
    R: Rng + ?Sized,
{
    let grid = direction.grid(n_steps);
    let uniform = source.select(&(0..source.len()).collect::<Vec<_>>());
    let out = simulate_batch(drift, &uniform, sigma, &grid, rng, false)?;
    let (b0, b1) = match direction {
        Direction::Forward => (uniform, out.terminal),
        Direction::Reverse => (out.terminal, uniform),
    };
    Coupling::paired(b0, b1, CouplingKind::ModelInduced)
}

/// Trajectories as CSV with header `traj_id,t,x_0,...,x_{d-1}`.
pub fn write_trajectories_csv<W: Write>(trajectories: &[Trajectory], mut out: W) -> Result<()> {
    let d = trajectories.first().map_or(0, |t| t.states.ncols());
    writeln!(out, "traj_id,t,{}", crate::io::coordinate_header(d))?;
    for (id, traj) in trajectories.iter().enumerate() {
        for (t, row) in traj.times.iter().zip(traj.states.rows()) {
            let coords = row.iter().map(|v| format_sig9(*v)).collect::<Vec<_>>().join(",");
            writeln!(out, "{id},{},{coords}", format_sig9(*t))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::{ConditionalDrift, DriftKind, PinnedPath};
    use crate::net::Activation;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(0, 0.0, 1.0).is_err());
        assert!(TimeGrid::new(10, 0.5, 0.5).is_err());
        assert!(TimeGrid::new(10, 0.0, 1.5).is_err());
        let g = TimeGrid::reverse(4);
        assert!(g.is_reverse());
        assert_eq!(g.times(), vec![1.0, 0.75, 0.5, 0.25, 0.0]);
    }

    #[test]
    fn constant_drift_single_step() {
        let grid = TimeGrid::forward(1);
        let traj = euler_maruyama(|_, _| vec![2.5, -1.0], &[0.0, 0.0], 0.0, &grid, &mut rng(0)).unwrap();
        assert_eq!(traj.terminal().to_vec(), vec![2.5, -1.0]);
        assert_eq!(traj.times, vec![0.0, 1.0]);
    }

    #[test]
    fn brownian_terminal_variance() {
        let n = 100_000;
        let init = SampleBatch::new(Array2::zeros((n, 2))).unwrap();
        let zero = FnDrift::new(2, |_, x: &[f64]| vec![0.0; x.len()]);
        let out = simulate_batch(&zero, &init, 1.0, &TimeGrid::forward(10), &mut rng(1), false).unwrap();
        let var = out.terminal.variance();
        let se = (2.0 / (n as f64 - 1.0)).sqrt();
        for v in var.iter() {
            assert!((v - 1.0).abs() < 3.0 * se, "variance {v}");
        }
    }

    #[test]
    fn first_order_convergence_on_linear_decay() {
        let exact = (-1.0f64).exp();
        let err = |n: usize| {
            let traj = euler_maruyama(|_, x| vec![-x[0]], &[1.0], 0.0, &TimeGrid::forward(n), &mut rng(0)).unwrap();
            (traj.terminal()[0] - exact).abs()
        };
        let errors: Vec<f64> = [100, 200, 1000, 2000, 10_000, 20_000].iter().map(|&n| err(n)).collect();
        // Fitted constant C = err·n stays bounded across resolutions.
        let c: Vec<f64> = errors.iter().zip([100, 200, 1000, 2000, 10_000, 20_000]).map(|(e, n)| e * n as f64).collect();
        let cmax = c.iter().cloned().fold(0.0, f64::max);
        for (e, n) in errors.iter().zip([100, 200, 1000, 2000, 10_000, 20_000]) {
            assert!(*e <= cmax / n as f64 + 1e-15);
        }
        for pair in errors.chunks(2) {
            let ratio = pair[0] / pair[1];
            assert!((ratio - 2.0).abs() < 0.4, "halving ratio {ratio}");
        }
    }

    #[test]
    fn zero_drift_without_noise_is_identity() {
        let init = SampleBatch::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap();
        let zero = DriftNetwork::zeros(2, &[4], Activation::Silu);
        let out = simulate_batch(&zero, &init, 0.0, &TimeGrid::forward(20), &mut rng(2), true).unwrap();
        assert_eq!(out.terminal, init);
        let trajs = out.trajectories.unwrap();
        assert_eq!(trajs.len(), 2);
        assert_eq!(trajs[1].states.nrows(), 21);
    }

    #[test]
    fn row_permutation_and_index_keyed_noise() {
        let rows: Vec<Vec<f64>> = (0..300).map(|i| vec![i as f64 * 0.01, -(i as f64)]).collect();
        let init = SampleBatch::from_rows(&rows).unwrap();
        let perm: Vec<usize> = (0..300).rev().collect();
        let permuted = init.select(&perm);
        let decay = FnDrift::new(2, |_, x: &[f64]| x.iter().map(|v| -0.5 * v).collect());
        let grid = TimeGrid::forward(50);

        // Deterministic flow: output rows permute with the input rows.
        let a = simulate_batch_seeded(&decay, &init, 0.0, &grid, 9, false).unwrap();
        let b = simulate_batch_seeded(&decay, &permuted, 0.0, &grid, 9, false).unwrap();
        assert_eq!(a.terminal.select(&perm), b.terminal);

        // With noise and zero drift, row i always receives the same increments.
        let zero = FnDrift::new(2, |_, x: &[f64]| vec![0.0; x.len()]);
        let a = simulate_batch_seeded(&zero, &init, 1.0, &grid, 9, false).unwrap();
        let b = simulate_batch_seeded(&zero, &permuted, 1.0, &grid, 9, false).unwrap();
        let inc_a = &a.terminal.points() - &init.points();
        let inc_b = &b.terminal.points() - &permuted.points();
        assert!((&inc_a - &inc_b).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let rows: Vec<Vec<f64>> = (0..700).map(|i| vec![(i as f64).sin()]).collect();
        let init = SampleBatch::from_rows(&rows).unwrap();
        let drift = FnDrift::new(1, |t, x: &[f64]| vec![t - x[0]]);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_batch_seeded(&drift, &init, 0.7, &TimeGrid::forward(40), 3, false).unwrap())
        };
        let one = run(1);
        let four = run(4);
        assert!(one
            .terminal
            .points()
            .iter()
            .zip(four.terminal.points().iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn non_finite_state_names_the_step() {
        let blowup = FnDrift::new(1, |_, x: &[f64]| vec![x[0] * 1e200]);
        let init = SampleBatch::from_rows(&[vec![1e200]]).unwrap();
        match simulate_batch_seeded(&blowup, &init, 0.0, &TimeGrid::forward(5), 0, false) {
            Err(Error::NonFinite { step }) => assert_eq!(step, 1),
            other => panic!("unexpected {other:?}"),
        }
        let r = euler_maruyama(|_, _| vec![f64::NAN], &[0.0], 0.0, &TimeGrid::forward(3), &mut rng(0));
        assert!(matches!(r, Err(Error::NonFinite { step: 1 })));
    }

    #[test]
    fn doob_bridge_hits_the_target() {
        // Mean terminal state under the forward Doob drift from x0 = 0 to x1 = 1.
        let drift = ConditionalDrift::new(DriftKind::DoobForward, PinnedPath::brownian_bridge(1.0), 1.0);
        let f = FnDrift::new(1, move |t, x: &[f64]| drift.eval(x, &[0.0], &[1.0], t).unwrap());
        let n = 10_000;
        let init = SampleBatch::new(Array2::zeros((n, 1))).unwrap();
        let out = simulate_batch(&f, &init, 1.0, &TimeGrid::forward(1000), &mut rng(5), false).unwrap();
        // The final step is taken at t = 1 - Δt with factor 1/Δt, which lands on
        // x1 up to one step of noise: sd sqrt(Δt).
        let mean = out.terminal.mean()[0];
        let se = (1e-3f64).sqrt() / (n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * (se + 1e-3), "mean {mean}");
    }

    #[test]
    fn reverse_time_recovers_the_initial_mean() {
        // Brownian motion from the point mass at 2 is reversed by the drift (2 - x)/t.
        let n = 20_000;
        let start = SampleBatch::new(Array2::from_elem((n, 1), 2.0)).unwrap();
        let zero = FnDrift::new(1, |_, x: &[f64]| vec![0.0; x.len()]);
        let fwd = simulate_batch(&zero, &start, 1.0, &TimeGrid::forward(200), &mut rng(6), false).unwrap();
        assert!((fwd.terminal.mean()[0] - 2.0).abs() < 3.0 / (n as f64).sqrt());
        let drift = ConditionalDrift::new(DriftKind::DoobReverse, PinnedPath::brownian_bridge(1.0), 1.0);
        let back = FnDrift::new(1, move |t, x: &[f64]| drift.eval(x, &[2.0], &[0.0], t).unwrap());
        let rev = simulate_batch(&back, &fwd.terminal, 1.0, &TimeGrid::reverse(200), &mut rng(7), false).unwrap();
        let mean = rev.terminal.mean()[0];
        assert!((mean - 2.0).abs() < 3.0 / (n as f64).sqrt() + 0.01, "mean {mean}");
    }

    #[test]
    fn model_coupling_examples() {
        let source = SampleBatch::from_rows(&[vec![0.0], vec![1.0], vec![-2.0]]).unwrap();
        let zero = DriftNetwork::zeros(1, &[4], Activation::Silu);
        let c = model_coupling(&zero, &source, 0.0, 10, Direction::Forward, &mut rng(0)).unwrap();
        assert_eq!(c.kind(), CouplingKind::ModelInduced);
        assert_eq!(c.batch0(), c.batch1());
        assert_eq!(c.support().len(), 3);

        let constant = FnDrift::new(1, |_, _: &[f64]| vec![0.5]);
        let fwd = model_coupling(&constant, &source, 0.0, 10, Direction::Forward, &mut rng(0)).unwrap();
        assert!((&fwd.batch1().points() - &(&source.points() + 0.5)).iter().all(|v| v.abs() < 1e-12));
        // Reverse time: the source sits at t = 1 and the drift acts per unit of reverse time.
        let rev = model_coupling(&constant, &source, 0.0, 10, Direction::Reverse, &mut rng(0)).unwrap();
        assert_eq!(rev.batch1(), &source);
        assert!((&rev.batch0().points() - &(&source.points() + 0.5)).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn trajectory_csv_header() {
        let traj = euler_maruyama(|_, _| vec![1.0, 0.0], &[0.0, 0.0], 0.0, &TimeGrid::forward(2), &mut rng(0)).unwrap();
        let mut buf = Vec::new();
        write_trajectories_csv(&[traj], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "traj_id,t,x_0,x_1");
        assert_eq!(lines[1], "0,0,0,0");
        assert_eq!(lines[3], "0,1,1,0");
    }
}
