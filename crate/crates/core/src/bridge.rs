//! Bridge-problem domain types: Gaussian pinned paths and the closed-form
//! conditional drifts that steer a process between two fixed endpoints.
//!
//! A pinned path is the Gaussian law of the state at time `t` given both
//! endpoints,
//!
//! ```text
//! P_t(x | x0, x1) = N(x; a_t x0 + b_t x1, γ_t² I),
//! ```
//!
//! with `a_0 = 1, b_0 = 0, a_1 = 0, b_1 = 1`. A conditional drift
//! `u_t(x | x0, x1)` is a vector field whose (S)DE reproduces those
//! marginals.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Default singularity guard for drifts with a `1/t` or `1/(1-t)` factor.
pub const DEFAULT_T_CLIP: f64 = 1e-3;

/// Default constant width of the linear (flow matching) path.
pub const DEFAULT_SIGMA_MIN: f64 = 1e-2;

/// Step of the central differences used for user-supplied schedules.
const SCHEDULE_FD_STEP: f64 = 1e-6;

/// Diffusion coefficients of the learned and the reference process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    /// σ of the learned SDE; zero gives an ODE bridge.
    pub sigma: f64,
    /// σ_ref of the Brownian reference process.
    pub sigma_ref: f64,
    /// State dimension.
    pub dim: usize,
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::Config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.sigma_ref.is_finite() && self.sigma_ref >= 0.0) {
            return Err(Error::Config(format!(
                "sigma_ref must be >= 0, got {}",
                self.sigma_ref
            )));
        }
        if self.dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        Ok(())
    }
}

type WeightFn = dyn Fn(f64) -> (f64, f64) + Send + Sync;
type StdFn = dyn Fn(f64) -> f64 + Send + Sync;

/// User-supplied mean weights `t -> (a_t, b_t)` and width `t -> γ_t`.
///
/// Derivatives are taken numerically by central differences.
#[derive(Clone)]
pub struct CustomSchedule {
    weights: Arc<WeightFn>,
    std: Arc<StdFn>,
}

impl CustomSchedule {
    pub fn new(
        weights: impl Fn(f64) -> (f64, f64) + Send + Sync + 'static,
        std: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            weights: Arc::new(weights),
            std: Arc::new(std),
        }
    }
}

impl fmt::Debug for CustomSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomSchedule { .. }")
    }
}

/// Gaussian pinned marginal path.
#[derive(Debug, Clone)]
pub enum PinnedPath {
    /// `μ_t = (1-t) x0 + t x1`, constant width `σ_min`.
    LinearSigmaMin { sigma_min: f64 },
    /// The Brownian bridge of `σ_ref W_t`: width `σ_ref sqrt(t(1-t))`.
    BrownianBridge { sigma_ref: f64 },
    Custom(CustomSchedule),
}

/// Central difference that stays inside `[0, 1]`.
fn derivative(f: impl Fn(f64) -> f64, t: f64) -> f64 {
    let h = SCHEDULE_FD_STEP;
    let lo = (t - h).max(0.0);
    let hi = (t + h).min(1.0);
    (f(hi) - f(lo)) / (hi - lo)
}

pub(crate) fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Domain(format!("time {t} outside [0, 1]")))
    }
}

impl PinnedPath {
    pub fn linear(sigma_min: f64) -> Self {
        PinnedPath::LinearSigmaMin { sigma_min }
    }

    pub fn brownian_bridge(sigma_ref: f64) -> Self {
        PinnedPath::BrownianBridge { sigma_ref }
    }

    /// Interpolation weights `(a_t, b_t)` of the mean.
    pub fn weights(&self, t: f64) -> (f64, f64) {
        match self {
            PinnedPath::LinearSigmaMin { .. } | PinnedPath::BrownianBridge { .. } => (1.0 - t, t),
            PinnedPath::Custom(c) => (c.weights)(t),
        }
    }

    /// Time derivatives `(da_t/dt, db_t/dt)`.
    pub fn weights_derivative(&self, t: f64) -> (f64, f64) {
        match self {
            PinnedPath::LinearSigmaMin { .. } | PinnedPath::BrownianBridge { .. } => (-1.0, 1.0),
            PinnedPath::Custom(c) => (
                derivative(|s| (c.weights)(s).0, t),
                derivative(|s| (c.weights)(s).1, t),
            ),
        }
    }

    /// Width `γ_t`.
    pub fn std(&self, t: f64) -> f64 {
        match self {
            PinnedPath::LinearSigmaMin { sigma_min } => *sigma_min,
            PinnedPath::BrownianBridge { sigma_ref } => sigma_ref * (t * (1.0 - t)).max(0.0).sqrt(),
            PinnedPath::Custom(c) => (c.std)(t),
        }
    }

    /// `dγ_t/dt`; infinite at the endpoints of the Brownian bridge.
    pub fn std_derivative(&self, t: f64) -> f64 {
        match self {
            PinnedPath::LinearSigmaMin { .. } => 0.0,
            PinnedPath::BrownianBridge { sigma_ref } => {
                sigma_ref * (1.0 - 2.0 * t) / (2.0 * (t * (1.0 - t)).sqrt())
            }
            PinnedPath::Custom(c) => derivative(|s| (c.std)(s), t),
        }
    }

    /// Mean and width of `P_t(· | x0, x1)`.
    pub fn mean_std(&self, x0: &[f64], x1: &[f64], t: f64) -> Result<(Vec<f64>, f64)> {
        check_time(t)?;
        check_len("pinned endpoints", x0.len(), x1.len())?;
        let (a, b) = self.weights(t);
        let mean = x0.iter().zip(x1).map(|(p, q)| a * p + b * q).collect();
        Ok((mean, self.std(t)))
    }

    /// Exact draw from `P_t(· | x0, x1)`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        x0: &[f64],
        x1: &[f64],
        t: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x0.len()];
        self.sample_into(x0, x1, t, rng, &mut out)?;
        Ok(out)
    }

    /// As [`PinnedPath::sample`], writing into `out`.
    ///
    /// One standard normal is consumed per coordinate even when `γ_t = 0`,
    /// so the random stream does not depend on `t`.
    pub fn sample_into<R: Rng + ?Sized>(
        &self,
        x0: &[f64],
        x1: &[f64],
        t: f64,
        rng: &mut R,
        out: &mut [f64],
    ) -> Result<()> {
        check_time(t)?;
        check_len("pinned endpoints", x0.len(), x1.len())?;
        check_len("pinned output", x0.len(), out.len())?;
        let (a, b) = self.weights(t);
        let std = self.std(t);
        for ((o, p), q) in out.iter_mut().zip(x0).zip(x1) {
            let z: f64 = rng.sample(StandardNormal);
            *o = a * p + b * q;
            if std != 0.0 {
                *o += std * z;
            }
        }
        Ok(())
    }
}

/// Free-function form of [`PinnedPath::mean_std`].
pub fn pinned_mean_std(path: &PinnedPath, x0: &[f64], x1: &[f64], t: f64) -> Result<(Vec<f64>, f64)> {
    path.mean_std(x0, x1, t)
}

/// Free-function form of [`PinnedPath::sample`].
pub fn sample_pinned<R: Rng + ?Sized>(
    path: &PinnedPath,
    x0: &[f64],
    x1: &[f64],
    t: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    path.sample(x0, x1, t, rng)
}

/// Which closed-form conditional drift to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    /// `x1 - x0`, the straight-line velocity.
    ConstantLine,
    /// Probability-flow ODE of the Brownian bridge.
    SbBridge,
    /// Doob h-transform `(x1 - x)/(1 - t)` toward `x1`.
    DoobForward,
    /// Reverse-time Doob drift `(x0 - x)/t` toward `x0`.
    DoobReverse,
    /// Minimal-kinetic-energy drift built from the path schedules.
    Kinetic,
}

impl DriftKind {
    /// Drifts whose bridge needs noise (`σ = σ_ref`) rather than an ODE.
    pub fn is_stochastic(self) -> bool {
        matches!(
            self,
            DriftKind::DoobForward | DriftKind::DoobReverse | DriftKind::Kinetic
        )
    }

    /// Closed interval of `t` where the formula is finite.
    pub fn valid_interval(self, t_clip: f64) -> (f64, f64) {
        match self {
            DriftKind::ConstantLine => (0.0, 1.0),
            DriftKind::DoobForward => (0.0, 1.0 - t_clip),
            DriftKind::DoobReverse => (t_clip, 1.0),
            DriftKind::SbBridge | DriftKind::Kinetic => (t_clip, 1.0 - t_clip),
        }
    }
}

/// Conditional drift `u_t(x | x0, x1)` tied to a pinned path.
///
/// Times closer than `t_clip` to a singular endpoint are clamped onto the
/// guard boundary; each clamp bumps a diagnostic counter shared by clones.
#[derive(Debug, Clone)]
pub struct ConditionalDrift {
    kind: DriftKind,
    path: PinnedPath,
    sigma_ref: f64,
    t_clip: f64,
    clamps: Arc<AtomicU64>,
}

impl ConditionalDrift {
    pub fn new(kind: DriftKind, path: PinnedPath, sigma_ref: f64) -> Self {
        Self {
            kind,
            path,
            sigma_ref,
            t_clip: DEFAULT_T_CLIP,
            clamps: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn with_t_clip(mut self, t_clip: f64) -> Self {
        self.t_clip = t_clip;
        self
    }

    pub fn kind(&self) -> DriftKind {
        self.kind
    }

    pub fn path(&self) -> &PinnedPath {
        &self.path
    }

    pub fn t_clip(&self) -> f64 {
        self.t_clip
    }

    /// Number of evaluations whose time had to be clamped.
    pub fn clamped_evaluations(&self) -> u64 {
        self.clamps.load(Ordering::Relaxed)
    }

    fn clamp_time(&self, t: f64) -> f64 {
        let (lo, hi) = self.kind.valid_interval(self.t_clip);
        if t < lo || t > hi {
            self.clamps.fetch_add(1, Ordering::Relaxed);
            t.clamp(lo, hi)
        } else {
            t
        }
    }

    pub fn eval(&self, x: &[f64], x0: &[f64], x1: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.len()];
        self.eval_into(x, x0, x1, t, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, x: &[f64], x0: &[f64], x1: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        check_time(t)?;
        let d = x.len();
        check_len("drift x0", d, x0.len())?;
        check_len("drift x1", d, x1.len())?;
        check_len("drift output", d, out.len())?;
        let t = self.clamp_time(t);
        match self.kind {
            DriftKind::ConstantLine => {
                for i in 0..d {
                    out[i] = x1[i] - x0[i];
                }
            }
            DriftKind::SbBridge => {
                let coef = (1.0 - 2.0 * t) / (2.0 * t * (1.0 - t));
                for i in 0..d {
                    let mean = t * x1[i] + (1.0 - t) * x0[i];
                    out[i] = coef * (x[i] - mean) + (x1[i] - x0[i]);
                }
            }
            DriftKind::DoobForward => {
                let inv = 1.0 / (1.0 - t);
                for i in 0..d {
                    out[i] = (x1[i] - x[i]) * inv;
                }
            }
            DriftKind::DoobReverse => {
                let inv = 1.0 / t;
                for i in 0..d {
                    out[i] = (x0[i] - x[i]) * inv;
                }
            }
            DriftKind::Kinetic => {
                kinetic_drift_into(&self.path, self.sigma_ref, x, x0, x1, t, out)?;
            }
        }
        Ok(())
    }
}

/// Free-function form of [`ConditionalDrift::eval`].
pub fn eval_conditional_drift(
    drift: &ConditionalDrift,
    x: &[f64],
    x0: &[f64],
    x1: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    drift.eval(x, x0, x1, t)
}

/// Kinetic coefficient `a_t = (γ'_t - σ_ref²/(2γ_t)) / γ_t`.
pub fn kinetic_coefficient(path: &PinnedPath, sigma_ref: f64, t: f64) -> Result<f64> {
    let gamma = path.std(t);
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!(
            "kinetic drift needs a positive path width, got {gamma} at t = {t}"
        )));
    }
    let dgamma = path.std_derivative(t);
    Ok((dgamma - sigma_ref * sigma_ref / (2.0 * gamma)) / gamma)
}

/// Minimal-kinetic-energy drift `dμ_t/dt + a_t (x - μ_t)` of a Gaussian
/// schedule under a Brownian reference with coefficient `σ_ref`.
pub fn kinetic_drift(
    path: &PinnedPath,
    sigma_ref: f64,
    x: &[f64],
    x0: &[f64],
    x1: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    check_time(t)?;
    let mut out = vec![0.0; x.len()];
    kinetic_drift_into(path, sigma_ref, x, x0, x1, t, &mut out)?;
    Ok(out)
}

fn kinetic_drift_into(
    path: &PinnedPath,
    sigma_ref: f64,
    x: &[f64],
    x0: &[f64],
    x1: &[f64],
    t: f64,
    out: &mut [f64],
) -> Result<()> {
    check_len("kinetic x0", x.len(), x0.len())?;
    check_len("kinetic x1", x.len(), x1.len())?;
    let a = kinetic_coefficient(path, sigma_ref, t)?;
    let (wa, wb) = path.weights(t);
    let (da, db) = path.weights_derivative(t);
    for i in 0..x.len() {
        let mean = wa * x0[i] + wb * x1[i];
        let dmean = da * x0[i] + db * x1[i];
        out[i] = dmean + a * (x[i] - mean);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn brownian_bridge_mean_std() {
        let bb = PinnedPath::brownian_bridge(1.0);
        let (m, s) = bb.mean_std(&[0.0], &[1.0], 0.5).unwrap();
        assert_eq!(m, vec![0.5]);
        assert_eq!(s, 0.5);

        let bb2 = PinnedPath::brownian_bridge(2.0);
        let (m, s) = bb2.mean_std(&[0.0], &[4.0], 0.25).unwrap();
        assert_eq!(m, vec![1.0]);
        assert!(close(s, 2.0 * 0.1875f64.sqrt(), 1e-15));
        assert!(close(s, 0.866_025_403_784_438_6, 1e-12));
    }

    #[test]
    fn boundary_pinning() {
        let x0 = [1.0, -2.0];
        let x1 = [3.0, 5.0];
        let bb = PinnedPath::brownian_bridge(1.3);
        assert_eq!(bb.mean_std(&x0, &x1, 0.0).unwrap(), (x0.to_vec(), 0.0));
        assert_eq!(bb.mean_std(&x0, &x1, 1.0).unwrap(), (x1.to_vec(), 0.0));
        let lin = PinnedPath::linear(0.01);
        assert_eq!(lin.mean_std(&x0, &x1, 0.0).unwrap(), (x0.to_vec(), 0.01));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(bb.sample(&x0, &x1, 0.0, &mut rng).unwrap(), x0.to_vec());
        assert_eq!(bb.sample(&x0, &x1, 1.0, &mut rng).unwrap(), x1.to_vec());
        let s = lin.sample(&x0, &x1, 1.0, &mut rng).unwrap();
        for (a, b) in s.iter().zip(&x1) {
            assert!((a - b).abs() < 0.01 * 6.0);
        }
    }

    #[test]
    fn time_and_shape_errors() {
        let bb = PinnedPath::brownian_bridge(1.0);
        assert!(matches!(bb.mean_std(&[0.0], &[1.0], 1.5), Err(Error::Domain(_))));
        assert!(matches!(bb.mean_std(&[0.0], &[1.0], -0.1), Err(Error::Domain(_))));
        assert!(matches!(
            bb.mean_std(&[0.0], &[1.0, 2.0], 0.5),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn pinned_sample_variance_at_midpoint() {
        let bb = PinnedPath::brownian_bridge(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| bb.sample(&[0.0], &[0.0], 0.5, &mut rng).unwrap()[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        // SE of a Gaussian sample variance: σ² sqrt(2/(n-1)).
        let se = 0.25 * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!((var - 0.25).abs() < 3.0 * se, "var {var}");
    }

    #[test]
    fn drift_examples() {
        let bb = PinnedPath::brownian_bridge(1.0);
        let doob = ConditionalDrift::new(DriftKind::DoobForward, bb.clone(), 1.0);
        assert_eq!(doob.eval(&[0.0], &[0.0], &[1.0], 0.5).unwrap(), vec![2.0]);
        for t in [0.0, 0.3, 0.9] {
            assert_eq!(doob.eval(&[1.5], &[0.0], &[1.5], t).unwrap(), vec![0.0]);
        }

        let sb = ConditionalDrift::new(DriftKind::SbBridge, bb.clone(), 1.0);
        assert_eq!(sb.eval(&[7.0], &[1.0], &[3.0], 0.5).unwrap(), vec![2.0]);
        let v = sb.eval(&[1.0], &[0.0], &[0.0], 0.25).unwrap();
        assert!(close(v[0], 0.5 / 0.375, 1e-12));

        let line = ConditionalDrift::new(DriftKind::ConstantLine, PinnedPath::linear(0.01), 0.0);
        assert_eq!(line.eval(&[9.0, 9.0], &[1.0, 2.0], &[4.0, 0.0], 0.0).unwrap(), vec![3.0, -2.0]);

        let rev = ConditionalDrift::new(DriftKind::DoobReverse, bb, 1.0);
        assert_eq!(rev.eval(&[1.0], &[0.0], &[5.0], 0.5).unwrap(), vec![-2.0]);
    }

    #[test]
    fn singular_times_are_clamped_and_counted() {
        let bb = PinnedPath::brownian_bridge(1.0);
        let doob = ConditionalDrift::new(DriftKind::DoobForward, bb.clone(), 1.0);
        let v = doob.eval(&[0.0], &[0.0], &[1.0], 1.0).unwrap();
        assert!(v[0].is_finite());
        assert!(close(v[0], 1.0 / DEFAULT_T_CLIP, 1e-6));
        assert_eq!(doob.clamped_evaluations(), 1);
        doob.eval(&[0.0], &[0.0], &[1.0], 0.5).unwrap();
        assert_eq!(doob.clamped_evaluations(), 1);

        let rev = ConditionalDrift::new(DriftKind::DoobReverse, bb.clone(), 1.0);
        assert!(rev.eval(&[0.0], &[1.0], &[1.0], 0.0).unwrap()[0].is_finite());
        let sb = ConditionalDrift::new(DriftKind::SbBridge, bb, 1.0);
        assert!(sb.eval(&[0.0], &[1.0], &[1.0], 0.0).unwrap()[0].is_finite());
        assert!(sb.eval(&[0.0], &[1.0], &[1.0], 1.0).unwrap()[0].is_finite());
    }

    #[test]
    fn kinetic_coefficient_of_brownian_bridge() {
        // a_t = -1/(1-t) symbolically; at t = 0.5 that is -2.
        let bb = PinnedPath::brownian_bridge(1.0);
        assert!(close(kinetic_coefficient(&bb, 1.0, 0.5).unwrap(), -2.0, 1e-12));
        // Same schedule through the numeric-derivative route.
        let custom = PinnedPath::Custom(CustomSchedule::new(|t| (1.0 - t, t), |t| (t * (1.0 - t)).sqrt()));
        for t in [0.1, 0.37, 0.5, 0.8] {
            let a = kinetic_coefficient(&custom, 1.0, t).unwrap();
            assert!(close(a, -1.0 / (1.0 - t), 1e-6), "t={t} a={a}");
        }
    }

    #[test]
    fn kinetic_at_mean_is_mean_velocity() {
        let bb = PinnedPath::brownian_bridge(0.7);
        let x0 = [1.0, -1.0];
        let x1 = [2.0, 3.0];
        let (mu, _) = bb.mean_std(&x0, &x1, 0.3).unwrap();
        let v = kinetic_drift(&bb, 0.7, &mu, &x0, &x1, 0.3).unwrap();
        assert!(close(v[0], 1.0, 1e-12) && close(v[1], 4.0, 1e-12));
    }

    #[test]
    fn kinetic_rejects_zero_width() {
        let bb = PinnedPath::brownian_bridge(1.0);
        assert!(matches!(
            kinetic_drift(&bb, 1.0, &[0.0], &[0.0], &[1.0], 0.0),
            Err(Error::Domain(_))
        ));
        let lin = PinnedPath::linear(0.0);
        assert!(kinetic_drift(&lin, 1.0, &[0.0], &[0.0], &[1.0], 0.5).is_err());
    }

    proptest! {
        #[test]
        fn kinetic_matches_doob_for_brownian_schedules(
            x in -5.0f64..5.0, x0 in -5.0f64..5.0, x1 in -5.0f64..5.0,
            t in 0.01f64..0.99, sigma_ref in 0.2f64..3.0,
        ) {
            let bb = PinnedPath::brownian_bridge(sigma_ref);
            let k = kinetic_drift(&bb, sigma_ref, &[x], &[x0], &[x1], t).unwrap()[0];
            let doob = (x1 - x) / (1.0 - t);
            prop_assert!((k - doob).abs() < 1e-9 * (1.0 + doob.abs()));
        }

        #[test]
        fn drift_is_pure(x in -3.0f64..3.0, t in 0.0f64..1.0) {
            let d = ConditionalDrift::new(DriftKind::SbBridge, PinnedPath::brownian_bridge(1.0), 1.0);
            let a = d.eval(&[x], &[0.5], &[-1.0], t).unwrap();
            let b = d.eval(&[x], &[0.5], &[-1.0], t).unwrap();
            prop_assert_eq!(a[0].to_bits(), b[0].to_bits());
            prop_assert!(a[0].is_finite());
        }
    }
}
