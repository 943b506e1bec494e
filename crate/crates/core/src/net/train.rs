use ndarray::{Array1, Array2};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{optimizer_step, DriftNetwork, OptimizerState, RegressionBatch};
use crate::bridge::{ConditionalDrift, PinnedPath};
use crate::coupling::{Coupling, PairBatch};
use crate::error::{check_len, Error, Result};

/// Supplies endpoint pairs `(x0, x1)` for regression.
pub trait PairSource {
    fn draw_pairs(&mut self, n: usize, rng: &mut dyn RngCore) -> Result<PairBatch>;
}

impl PairSource for &Coupling {
    fn draw_pairs(&mut self, n: usize, rng: &mut dyn RngCore) -> Result<PairBatch> {
        Ok(self.sample_pairs(n, rng))
    }
}

impl PairSource for Coupling {
    fn draw_pairs(&mut self, n: usize, rng: &mut dyn RngCore) -> Result<PairBatch> {
        Ok(self.sample_pairs(n, rng))
    }
}

/// Learning rate as a function of the step index within one training call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant(f64),
    /// Half-cosine decay from `initial` to `final_lr` over the call.
    Cosine { initial: f64, final_lr: f64 },
    /// Steps `start..start + steps` of a half-cosine decay spanning `span`
    /// steps, so consecutive calls continue one schedule.
    CosineWindow {
        initial: f64,
        final_lr: f64,
        start: usize,
        span: usize,
    },
}

fn cosine(initial: f64, final_lr: f64, step: usize, total: usize) -> f64 {
    let frac = if total <= 1 { 0.0 } else { (step as f64 / (total - 1) as f64).min(1.0) };
    final_lr + 0.5 * (initial - final_lr) * (1.0 + (std::f64::consts::PI * frac).cos())
}

impl LrSchedule {
    pub fn at(&self, step: usize, total: usize) -> f64 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::Cosine { initial, final_lr } => cosine(initial, final_lr, step, total),
            LrSchedule::CosineWindow {
                initial,
                final_lr,
                start,
                span,
            } => cosine(initial, final_lr, start + step, span),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 256,
            lr: LrSchedule::Constant(1e-3),
        }
    }
}

/// Per-step regression losses, recorded before each update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub losses: Vec<f64>,
}

impl TrainingLog {
    /// Mean of the last `k` losses.
    pub fn trailing_mean(&self, k: usize) -> f64 {
        let k = k.min(self.losses.len()).max(1);
        let tail = &self.losses[self.losses.len().saturating_sub(k)..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// Conditional regression: repeatedly draw pairs, times `t ~ U[t_clip, 1 - t_clip]`,
/// states from the pinned path and drift targets, then take one Adam step
/// on the squared error.
#[allow(clippy::too_many_arguments)]
pub fn train_regression<R: Rng>(
    net: &mut DriftNetwork,
    state: &mut OptimizerState,
    pairs: &mut dyn PairSource,
    pinned: &PinnedPath,
    drift: &ConditionalDrift,
    opts: &TrainOptions,
    rng: &mut R,
) -> Result<TrainingLog> {
    if opts.batch_size == 0 {
        return Err(Error::Domain("batch size must be positive".into()));
    }
    let d = net.dim();
    let t_clip = drift.t_clip();
    let mut log = TrainingLog {
        losses: Vec::with_capacity(opts.steps),
    };
    let mut xt = vec![0.0; d];
    let mut u = vec![0.0; d];
    for step in 0..opts.steps {
        let batch = pairs.draw_pairs(opts.batch_size, rng)?;
        check_len("pair dimension", d, batch.dim())?;
        let n = batch.len();
        let mut ts = Array1::<f64>::zeros(n);
        let mut xs = Array2::<f64>::zeros((n, d));
        let mut targets = Array2::<f64>::zeros((n, d));
        for k in 0..n {
            let t = rng.random_range(t_clip..=1.0 - t_clip);
            let x0 = batch.x0.row(k);
            let x1 = batch.x1.row(k);
            let (x0, x1) = (x0.as_slice().expect("row"), x1.as_slice().expect("row"));
            pinned.sample_into(x0, x1, t, rng, &mut xt)?;
            drift.eval_into(&xt, x0, x1, t, &mut u)?;
            ts[k] = t;
            xs.row_mut(k).assign(&ndarray::ArrayView1::from(&xt[..]));
            targets.row_mut(k).assign(&ndarray::ArrayView1::from(&u[..]));
        }
        let rb = RegressionBatch {
            t: ts,
            x: xs,
            target: targets,
        };
        let (loss, grads) = net.loss_and_grad(&rb)?;
        if !loss.is_finite() {
            return Err(Error::Data(format!("non-finite loss at training step {step}")));
        }
        log.losses.push(loss);
        optimizer_step(net, state, &grads, opts.lr.at(step, opts.steps));
    }
    Ok(log)
}
