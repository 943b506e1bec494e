//! The unified bridge-matching driver and its instantiations.
//!
//! Every outer iteration (1) picks a coupling `Q` and a pinned path,
//! (2) picks `σ` and the conditional drift, and (3) regresses a network on
//! the conditional drift. The instantiations differ only in those choices:
//!
//! | instantiation     | coupling                                 | path             | drift         | σ     |
//! |-------------------|------------------------------------------|------------------|---------------|-------|
//! | `cfm_independent` | independent mini-batches                 | linear, σ_min    | constant line | 0     |
//! | `ot_cfm`          | exact OT on mini-batches                 | linear, σ_min    | constant line | 0     |
//! | `sb_cfm`          | Sinkhorn on mini-batches                 | Brownian bridge  | SB bridge     | 0     |
//! | `imf`             | independent, then forward-model induced  | Brownian bridge  | Doob forward  | σ_ref |
//! | `dsbm`            | alternating forward / reverse induced    | Brownian bridge  | Doob fwd/rev  | σ_ref |
//!
//! Path and drift may be overridden subject to the σ rule: ODE drifts run
//! with `σ = 0`, stochastic drifts with `σ = σ_ref > 0`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::SampleBatch;
use crate::bridge::{ConditionalDrift, DiffusionConfig, DriftKind, PinnedPath, DEFAULT_SIGMA_MIN, DEFAULT_T_CLIP};
use crate::coupling::{
    exact_ot_coupling, independent_coupling, sinkhorn_coupling, Coupling, CouplingKind, PairBatch, SinkhornOptions,
};
use crate::data::EndpointDistribution;
use crate::error::{Error, Result};
use crate::eval::{energy_distance, simulate_with_kinetic_energy, MetricRecord, ENERGY_DISTANCE_MAX_N};
use crate::net::{train_regression, Activation, DriftNetwork, LrSchedule, OptimizerState, PairSource, TrainOptions, TrainingLog};
use crate::sim::{model_coupling, simulate_batch, Direction, EVAL_SIM_STEPS, TRAIN_SIM_STEPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Instantiation {
    CfmIndependent,
    OtCfm,
    SbCfm,
    Imf,
    Dsbm,
}

impl Instantiation {
    pub fn name(self) -> &'static str {
        match self {
            Instantiation::CfmIndependent => "cfm_independent",
            Instantiation::OtCfm => "ot_cfm",
            Instantiation::SbCfm => "sb_cfm",
            Instantiation::Imf => "imf",
            Instantiation::Dsbm => "dsbm",
        }
    }

    fn is_schrodinger(self) -> bool {
        matches!(self, Instantiation::Imf | Instantiation::Dsbm)
    }
}

fn default_sigma_min() -> f64 {
    DEFAULT_SIGMA_MIN
}

/// Pinned path choice; the Brownian bridge takes `σ_ref` from the diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PathConfig {
    LinearSigmaMin {
        #[serde(default = "default_sigma_min")]
        sigma_min: f64,
    },
    BrownianBridge,
}

impl PathConfig {
    pub fn build(self, sigma_ref: f64) -> PinnedPath {
        match self {
            PathConfig::LinearSigmaMin { sigma_min } => PinnedPath::linear(sigma_min),
            PathConfig::BrownianBridge => PinnedPath::brownian_bridge(sigma_ref),
        }
    }
}

/// When mini-batch couplings are recomputed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingRefresh {
    /// Fresh mini-batches and a fresh coupling every gradient step.
    #[default]
    PerStep,
    /// One coupling over `refresh_n` resampled points per outer iteration.
    PerOuterIteration,
}

fn default_hidden() -> Vec<usize> {
    vec![128, 128, 128]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            activation: Activation::Silu,
        }
    }
}

fn default_lr() -> f64 {
    1e-3
}

/// Adam learning rate; with `lr_final` set, a half-cosine decay from `lr`
/// to `lr_final` runs within every outer iteration, or once across the
/// whole run when `decay_over_run` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub lr_final: Option<f64>,
    #[serde(default)]
    pub decay_over_run: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: default_lr(),
            lr_final: None,
            decay_over_run: false,
        }
    }
}

impl OptimConfig {
    /// Schedule of outer iteration `iteration` out of `outer_iters`, each
    /// `steps` long.
    pub fn schedule(&self, iteration: usize, outer_iters: usize, steps: usize) -> LrSchedule {
        match self.lr_final {
            Some(final_lr) if self.decay_over_run => LrSchedule::CosineWindow {
                initial: self.lr,
                final_lr,
                start: iteration * steps,
                span: outer_iters.max(1) * steps,
            },
            Some(final_lr) => LrSchedule::Cosine {
                initial: self.lr,
                final_lr,
            },
            None => LrSchedule::Constant(self.lr),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkhornConfig {
    #[serde(default = "default_sinkhorn_tol")]
    pub tol: f64,
    #[serde(default = "default_sinkhorn_iter")]
    pub max_iter: usize,
}

fn default_sinkhorn_tol() -> f64 {
    SinkhornOptions::default().tol
}

fn default_sinkhorn_iter() -> usize {
    SinkhornOptions::default().max_iter
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            tol: default_sinkhorn_tol(),
            max_iter: default_sinkhorn_iter(),
        }
    }
}

impl SinkhornConfig {
    pub fn options(&self) -> SinkhornOptions {
        SinkhornOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            ..SinkhornOptions::default()
        }
    }
}

fn default_outer_iters() -> usize {
    10
}
fn default_inner_steps() -> usize {
    5000
}
fn default_batch_size() -> usize {
    256
}
fn default_t_clip() -> f64 {
    DEFAULT_T_CLIP
}
fn default_refresh_n() -> usize {
    1024
}
fn default_sim_steps_train() -> usize {
    TRAIN_SIM_STEPS
}
fn default_sim_steps_eval() -> usize {
    EVAL_SIM_STEPS
}
fn default_train_n() -> usize {
    10_000
}
fn default_eval_n() -> usize {
    1000
}

/// Configuration of one driver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UbaConfig {
    pub instantiation: Instantiation,
    #[serde(default = "default_outer_iters")]
    pub outer_iters: usize,
    /// Gradient steps per outer iteration.
    #[serde(default = "default_inner_steps")]
    pub inner_steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub diffusion: DiffusionConfig,
    /// Overrides the instantiation's pinned path.
    #[serde(default)]
    pub path: Option<PathConfig>,
    /// Overrides the instantiation's (forward) conditional drift.
    #[serde(default)]
    pub drift: Option<DriftKind>,
    #[serde(default = "default_t_clip")]
    pub t_clip: f64,
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub coupling_refresh: CouplingRefresh,
    /// Points per coupling under `per_outer_iteration` refresh.
    #[serde(default = "default_refresh_n")]
    pub refresh_n: usize,
    #[serde(default)]
    pub sinkhorn: SinkhornConfig,
    /// Simulated pairs cached per outer iteration for model-induced
    /// couplings; default `10 · batch_size · sqrt(inner_steps)`.
    #[serde(default)]
    pub pool_n: Option<usize>,
    #[serde(default = "default_sim_steps_train")]
    pub sim_steps_train: usize,
    #[serde(default = "default_sim_steps_eval")]
    pub sim_steps_eval: usize,
    /// Training points drawn once from each endpoint distribution.
    #[serde(default = "default_train_n")]
    pub train_n: usize,
    /// Points per held-out evaluation set.
    #[serde(default = "default_eval_n")]
    pub eval_n: usize,
    #[serde(default)]
    pub seed: u64,
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl UbaConfig {
    /// Defaults for everything but the instantiation and diffusion.
    pub fn new(instantiation: Instantiation, diffusion: DiffusionConfig) -> Self {
        Self {
            instantiation,
            outer_iters: default_outer_iters(),
            inner_steps: default_inner_steps(),
            batch_size: default_batch_size(),
            diffusion,
            path: None,
            drift: None,
            t_clip: default_t_clip(),
            net: NetConfig::default(),
            optim: OptimConfig::default(),
            coupling_refresh: CouplingRefresh::default(),
            refresh_n: default_refresh_n(),
            sinkhorn: SinkhornConfig::default(),
            pool_n: None,
            sim_steps_train: default_sim_steps_train(),
            sim_steps_eval: default_sim_steps_eval(),
            train_n: default_train_n(),
            eval_n: default_eval_n(),
            seed: 0,
        }
    }

    pub fn path_config(&self) -> PathConfig {
        self.path.unwrap_or(match self.instantiation {
            Instantiation::CfmIndependent | Instantiation::OtCfm => PathConfig::LinearSigmaMin {
                sigma_min: DEFAULT_SIGMA_MIN,
            },
            _ => PathConfig::BrownianBridge,
        })
    }

    pub fn pinned_path(&self) -> PinnedPath {
        self.path_config().build(self.diffusion.sigma_ref)
    }

    pub fn drift_kind(&self) -> DriftKind {
        self.drift.unwrap_or(match self.instantiation {
            Instantiation::CfmIndependent | Instantiation::OtCfm => DriftKind::ConstantLine,
            Instantiation::SbCfm => DriftKind::SbBridge,
            Instantiation::Imf | Instantiation::Dsbm => DriftKind::DoobForward,
        })
    }

    pub fn forward_drift(&self) -> ConditionalDrift {
        ConditionalDrift::new(self.drift_kind(), self.pinned_path(), self.diffusion.sigma_ref).with_t_clip(self.t_clip)
    }

    /// Target of the reverse network (DSBM).
    pub fn reverse_drift(&self) -> ConditionalDrift {
        ConditionalDrift::new(DriftKind::DoobReverse, self.pinned_path(), self.diffusion.sigma_ref)
            .with_t_clip(self.t_clip)
    }

    pub fn pool_size(&self) -> usize {
        self.pool_n
            .unwrap_or_else(|| (10.0 * self.batch_size as f64 * (self.inner_steps as f64).sqrt()).ceil() as usize)
    }

    /// Training options of outer iteration `iteration`.
    pub fn train_options(&self, iteration: usize) -> TrainOptions {
        TrainOptions {
            steps: self.inner_steps,
            batch_size: self.batch_size,
            lr: self.optim.schedule(iteration, self.outer_iters, self.inner_steps),
        }
    }

    /// Checks ranges and the σ rule; all failures are [`Error::Config`].
    pub fn validate(&self) -> Result<()> {
        self.diffusion.validate()?;
        let sigma = self.diffusion.sigma;
        let sigma_ref = self.diffusion.sigma_ref;
        let name = self.instantiation.name();
        if self.batch_size == 0 {
            return Err(config_error("batch_size must be positive"));
        }
        if self.net.hidden.iter().any(|h| *h == 0) {
            return Err(config_error("hidden layer widths must be positive"));
        }
        if !(self.t_clip > 0.0 && self.t_clip < 0.5) {
            return Err(config_error("t_clip must lie in (0, 0.5)"));
        }
        if !(self.optim.lr.is_finite() && self.optim.lr > 0.0) {
            return Err(config_error("optim.lr must be positive"));
        }
        if let Some(f) = self.optim.lr_final {
            if !(f.is_finite() && f >= 0.0) {
                return Err(config_error("optim.lr_final must be nonnegative"));
            }
        }
        if !(self.sinkhorn.tol > 0.0) || self.sinkhorn.max_iter == 0 {
            return Err(config_error("sinkhorn tol and max_iter must be positive"));
        }
        if self.sim_steps_train == 0 || self.sim_steps_eval == 0 {
            return Err(config_error("simulation step counts must be positive"));
        }
        if self.train_n == 0 || self.refresh_n == 0 || self.pool_size() == 0 {
            return Err(config_error("train_n, refresh_n and pool_n must be positive"));
        }
        if self.eval_n == 0 || self.eval_n > ENERGY_DISTANCE_MAX_N {
            return Err(config_error(format!("eval_n must lie in 1..={ENERGY_DISTANCE_MAX_N}")));
        }
        if let PathConfig::LinearSigmaMin { sigma_min } = self.path_config() {
            if !(sigma_min.is_finite() && sigma_min >= 0.0) {
                return Err(config_error("sigma_min must be nonnegative"));
            }
        }
        if self.path_config() == PathConfig::BrownianBridge && !(sigma_ref > 0.0) {
            return Err(config_error("the brownian_bridge path needs sigma_ref > 0"));
        }
        if self.instantiation == Instantiation::SbCfm && !(sigma_ref > 0.0) {
            return Err(config_error("sb_cfm needs sigma_ref > 0"));
        }
        let kind = self.drift_kind();
        if kind == DriftKind::DoobReverse {
            return Err(config_error("doob_reverse is only used as the reverse target of dsbm"));
        }
        if self.instantiation.is_schrodinger() {
            if !(sigma_ref > 0.0 && sigma == sigma_ref) {
                return Err(config_error(format!(
                    "σ-consistency rule violated: {name} requires sigma == sigma_ref > 0 (got sigma = {sigma}, sigma_ref = {sigma_ref})"
                )));
            }
            if kind != DriftKind::DoobForward || self.path_config() != PathConfig::BrownianBridge {
                return Err(config_error(format!("{name} requires the brownian_bridge path and the doob_forward drift")));
            }
        }
        if kind.is_stochastic() {
            if !(sigma_ref > 0.0 && sigma == sigma_ref) {
                return Err(config_error(format!(
                    "σ-consistency rule violated: the stochastic drift {kind:?} requires sigma == sigma_ref > 0 (got sigma = {sigma}, sigma_ref = {sigma_ref})"
                )));
            }
        } else if sigma != 0.0 {
            return Err(config_error(format!(
                "σ-consistency rule violated: {name} with an ODE drift requires sigma == 0 (got sigma = {sigma})"
            )));
        }
        Ok(())
    }
}

/// A network with its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSlot {
    pub net: DriftNetwork,
    pub optimizer: OptimizerState,
}

impl ModelSlot {
    fn new<R: Rng + ?Sized>(config: &UbaConfig, rng: &mut R) -> Self {
        let net = DriftNetwork::new(config.diffusion.dim, &config.net.hidden, config.net.activation, rng);
        let optimizer = OptimizerState::new(&net);
        Self { net, optimizer }
    }

    pub fn from_net(net: DriftNetwork) -> Self {
        let optimizer = OptimizerState::new(&net);
        Self { net, optimizer }
    }
}

/// Where the training pairs of the last outer iteration came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairOrigin {
    None,
    MiniBatch(CouplingKind),
    ForwardModel,
    ReverseModel,
}

/// Mutable driver state.
#[derive(Debug, Clone, PartialEq)]
pub struct UbaState {
    pub forward: ModelSlot,
    /// Present for `dsbm`.
    pub reverse: Option<ModelSlot>,
    /// Completed outer iterations.
    pub iteration: usize,
    pub last_origin: PairOrigin,
    /// One training log per completed outer iteration.
    pub logs: Vec<TrainingLog>,
}

impl UbaState {
    /// Fresh networks: random hidden layers and a zero output layer, so
    /// both start as the zero drift.
    pub fn new<R: Rng + ?Sized>(config: &UbaConfig, rng: &mut R) -> Self {
        let forward = ModelSlot::new(config, rng);
        let reverse = (config.instantiation == Instantiation::Dsbm).then(|| ModelSlot::new(config, rng));
        Self {
            forward,
            reverse,
            iteration: 0,
            last_origin: PairOrigin::None,
            logs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum BatchMethod {
    Independent,
    ExactOt,
    Sinkhorn { sigma_ref: f64, opts: SinkhornOptions },
}

impl BatchMethod {
    fn kind(self) -> CouplingKind {
        match self {
            BatchMethod::Independent => CouplingKind::Independent,
            BatchMethod::ExactOt => CouplingKind::ExactOt,
            BatchMethod::Sinkhorn { .. } => CouplingKind::EntropicOt,
        }
    }

    fn couple(self, b0: &SampleBatch, b1: &SampleBatch) -> Result<Coupling> {
        match self {
            BatchMethod::Independent => independent_coupling(b0, b1),
            BatchMethod::ExactOt => exact_ot_coupling(b0, b1),
            BatchMethod::Sinkhorn { sigma_ref, opts } => Ok(sinkhorn_coupling(b0, b1, sigma_ref, &opts)?.0),
        }
    }
}

fn resample<R: Rng + ?Sized>(data: &SampleBatch, n: usize, rng: &mut R) -> SampleBatch {
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..data.len())).collect();
    data.select(&idx)
}

/// Pairs from a coupling of fresh mini-batches resampled from the
/// training sets, or from one cached coupling.
struct MiniBatchPairs<'a> {
    data0: &'a SampleBatch,
    data1: &'a SampleBatch,
    method: BatchMethod,
    cached: Option<Coupling>,
}

impl PairSource for MiniBatchPairs<'_> {
    fn draw_pairs(&mut self, n: usize, rng: &mut dyn RngCore) -> Result<PairBatch> {
        if let Some(c) = &self.cached {
            return Ok(c.sample_pairs(n, rng));
        }
        let b0 = resample(self.data0, n, rng);
        let b1 = resample(self.data1, n, rng);
        match self.method {
            // Rows of two independent resamples are already draws from the
            // independent coupling of the training sets.
            BatchMethod::Independent => Ok(PairBatch {
                x0: b0.into_points(),
                x1: b1.into_points(),
            }),
            method => Ok(method.couple(&b0, &b1)?.sample_pairs(n, rng)),
        }
    }
}

fn mini_batch_pairs<'a, R: Rng + ?Sized>(
    config: &UbaConfig,
    method: BatchMethod,
    data0: &'a SampleBatch,
    data1: &'a SampleBatch,
    rng: &mut R,
) -> Result<MiniBatchPairs<'a>> {
    let cached = match config.coupling_refresh {
        CouplingRefresh::PerStep => None,
        CouplingRefresh::PerOuterIteration => {
            let b0 = resample(data0, config.refresh_n, rng);
            let b1 = resample(data1, config.refresh_n, rng);
            Some(method.couple(&b0, &b1)?)
        }
    };
    Ok(MiniBatchPairs {
        data0,
        data1,
        method,
        cached,
    })
}

fn check_data(config: &UbaConfig, data: &SampleBatch, which: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Data(format!("{which} training set is empty")));
    }
    if data.dim() != config.diffusion.dim {
        return Err(Error::Config(format!(
            "{which} has dimension {} but diffusion.dim is {}",
            data.dim(),
            config.diffusion.dim
        )));
    }
    Ok(())
}

/// One outer iteration: build the pair source, then regress the network
/// it belongs to. Appends the training log and advances the counter.
pub fn uba_iteration(
    state: &mut UbaState,
    config: &UbaConfig,
    data0: &SampleBatch,
    data1: &SampleBatch,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    check_data(config, data0, "source")?;
    check_data(config, data1, "target")?;
    let k = state.iteration;
    let sigma = config.diffusion.sigma;
    let path = config.pinned_path();
    let opts = config.train_options(k);
    let method = match config.instantiation {
        Instantiation::OtCfm => BatchMethod::ExactOt,
        Instantiation::SbCfm => BatchMethod::Sinkhorn {
            sigma_ref: config.diffusion.sigma_ref,
            opts: config.sinkhorn.options(),
        },
        _ => BatchMethod::Independent,
    };
    let model_round = config.instantiation.is_schrodinger() && k > 0;

    let log = if !model_round {
        let mut pairs = mini_batch_pairs(config, method, data0, data1, rng)?;
        state.last_origin = PairOrigin::MiniBatch(method.kind());
        let slot = &mut state.forward;
        train_regression(&mut slot.net, &mut slot.optimizer, &mut pairs, &path, &config.forward_drift(), &opts, rng)?
    } else if config.instantiation == Instantiation::Imf || k % 2 == 0 {
        // Forward net on pairs induced by the forward net (imf) or by the
        // reverse net simulated back from π1 (dsbm).
        let mut pool = match &state.reverse {
            Some(rev) if config.instantiation == Instantiation::Dsbm => {
                let start = resample(data1, config.pool_size(), rng);
                state.last_origin = PairOrigin::ReverseModel;
                model_coupling(&rev.net, &start, sigma, config.sim_steps_train, Direction::Reverse, rng)?
            }
            _ => {
                let start = resample(data0, config.pool_size(), rng);
                state.last_origin = PairOrigin::ForwardModel;
                model_coupling(&state.forward.net, &start, sigma, config.sim_steps_train, Direction::Forward, rng)?
            }
        };
        let slot = &mut state.forward;
        train_regression(&mut slot.net, &mut slot.optimizer, &mut pool, &path, &config.forward_drift(), &opts, rng)?
    } else {
        let start = resample(data0, config.pool_size(), rng);
        let mut pool = model_coupling(&state.forward.net, &start, sigma, config.sim_steps_train, Direction::Forward, rng)?;
        state.last_origin = PairOrigin::ForwardModel;
        let slot = state
            .reverse
            .as_mut()
            .ok_or_else(|| Error::Config("dsbm state has no reverse network".into()))?;
        train_regression(&mut slot.net, &mut slot.optimizer, &mut pool, &path, &config.reverse_drift(), &opts, rng)?
    };
    state.logs.push(log);
    state.iteration += 1;
    Ok(())
}

/// Independent random streams of one run.
pub struct RunStreams {
    pub data: ChaCha8Rng,
    pub train: ChaCha8Rng,
    pub eval: ChaCha8Rng,
}

impl RunStreams {
    pub fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut g = ChaCha8Rng::seed_from_u64(seed);
            g.set_stream(k);
            g
        };
        Self {
            data: stream(0),
            train: stream(1),
            eval: stream(2),
        }
    }
}

/// Fixed held-out sets used for every iteration's metrics.
#[derive(Debug, Clone)]
pub struct EvalSets {
    pub source: SampleBatch,
    pub target: SampleBatch,
}

/// Metrics of the current state, all tagged with `iteration`:
/// `train_loss` (trailing mean of 100 steps), `energy_distance` of the
/// forward model's terminal sample against the target set, `coupling_cov`
/// (trace of the cross-covariance of the induced pairs) and, for σ > 0,
/// `kinetic_energy`. DSBM adds the `_reverse` variants once the reverse
/// network has been trained.
pub fn evaluate<R: Rng + ?Sized>(
    state: &UbaState,
    config: &UbaConfig,
    sets: &EvalSets,
    iteration: usize,
    rng: &mut R,
) -> Result<Vec<MetricRecord>> {
    let mut out = Vec::new();
    if let Some(log) = state.logs.last() {
        out.push(MetricRecord::new(iteration, "train_loss", log.trailing_mean(100)));
    }
    let sigma = config.diffusion.sigma;
    let grid = Direction::Forward.grid(config.sim_steps_eval);
    let (terminal, kinetic) = if sigma > 0.0 {
        let (t, k) = simulate_with_kinetic_energy(&state.forward.net, &sets.source, sigma, &grid, rng)?;
        (t, Some(k))
    } else {
        (simulate_batch(&state.forward.net, &sets.source, 0.0, &grid, rng, false)?.terminal, None)
    };
    out.push(MetricRecord::new(iteration, "energy_distance", energy_distance(&terminal, &sets.target)?));
    let pairs = Coupling::paired(sets.source.clone(), terminal, CouplingKind::ModelInduced)?;
    out.push(MetricRecord::new(iteration, "coupling_cov", pairs.cross_covariance().sum()));
    if let Some(k) = kinetic {
        out.push(MetricRecord::new(iteration, "kinetic_energy", k.value).with_std_error(k.std_error));
    }
    if let (Some(rev), true) = (&state.reverse, state.iteration >= 2) {
        let back = simulate_batch(&rev.net, &sets.target, sigma, &Direction::Reverse.grid(config.sim_steps_eval), rng, false)?
            .terminal;
        out.push(MetricRecord::new(iteration, "energy_distance_reverse", energy_distance(&back, &sets.source)?));
        let pairs = Coupling::paired(back, sets.target.clone(), CouplingKind::ModelInduced)?;
        out.push(MetricRecord::new(iteration, "coupling_cov_reverse", pairs.cross_covariance().sum()));
    }
    Ok(out)
}

/// Result of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: UbaState,
    pub history: Vec<MetricRecord>,
    pub eval_sets: EvalSets,
}

/// Validates the configuration, draws training and evaluation sets from
/// separate streams, then runs `outer_iters` iterations, evaluating after
/// each.
pub fn run(config: &UbaConfig, source: &EndpointDistribution, target: &EndpointDistribution) -> Result<RunOutput> {
    run_with(config, source, target, |_| {})
}

/// As [`run`], calling `on_iteration` with the state after every outer
/// iteration (before its evaluation).
pub fn run_with(
    config: &UbaConfig,
    source: &EndpointDistribution,
    target: &EndpointDistribution,
    mut on_iteration: impl FnMut(&UbaState),
) -> Result<RunOutput> {
    config.validate()?;
    let s0 = source.sampler()?;
    let s1 = target.sampler()?;
    for (s, which) in [(&s0, "source"), (&s1, "target")] {
        if s.dim() != config.diffusion.dim {
            return Err(Error::Config(format!(
                "{which} distribution has dimension {} but diffusion.dim is {}",
                s.dim(),
                config.diffusion.dim
            )));
        }
    }
    let mut streams = RunStreams::new(config.seed);
    let data0 = s0.sample(config.train_n, &mut streams.data)?;
    let data1 = s1.sample(config.train_n, &mut streams.data)?;
    let sets = EvalSets {
        source: s0.sample(config.eval_n, &mut streams.eval)?,
        target: s1.sample(config.eval_n, &mut streams.eval)?,
    };
    let mut state = UbaState::new(config, &mut streams.train);
    let mut history = Vec::new();
    for it in 0..config.outer_iters {
        uba_iteration(&mut state, config, &data0, &data1, &mut streams.train)?;
        on_iteration(&state);
        history.extend(evaluate(&state, config, &sets, it, &mut streams.eval)?);
    }
    Ok(RunOutput {
        state,
        history,
        eval_sets: sets,
    })
}

/// Values of metric `name` in iteration order.
pub fn metric_series(history: &[MetricRecord], name: &str) -> Vec<f64> {
    history.iter().filter(|r| r.name == name).map(|r| r.value).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diffusion(sigma: f64, sigma_ref: f64) -> DiffusionConfig {
        DiffusionConfig { sigma, sigma_ref, dim: 1 }
    }

    fn small(inst: Instantiation, sigma: f64, sigma_ref: f64) -> UbaConfig {
        let mut c = UbaConfig::new(inst, diffusion(sigma, sigma_ref));
        c.outer_iters = 1;
        c.inner_steps = 200;
        c.batch_size = 32;
        c.net.hidden = vec![16];
        c.pool_n = Some(256);
        c.sim_steps_train = 20;
        c.sim_steps_eval = 20;
        c.train_n = 256;
        c.eval_n = 64;
        c
    }

    fn point(x: f64) -> EndpointDistribution {
        EndpointDistribution::PointMass { point: vec![x] }
    }

    #[test]
    fn sigma_rule() {
        let bad = small(Instantiation::Imf, 0.0, 1.0);
        match bad.validate() {
            Err(Error::Config(msg)) => assert!(msg.contains("σ-consistency"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(small(Instantiation::Dsbm, 0.5, 1.0).validate().is_err());
        assert!(small(Instantiation::OtCfm, 0.3, 1.0).validate().is_err());
        assert!(small(Instantiation::Imf, 1.0, 1.0).validate().is_ok());
        assert!(small(Instantiation::SbCfm, 0.0, 1.0).validate().is_ok());
        assert!(small(Instantiation::SbCfm, 0.0, 0.0).validate().is_err());
        let mut doob_cfm = small(Instantiation::CfmIndependent, 1.0, 1.0);
        assert!(doob_cfm.validate().is_err());
        doob_cfm.path = Some(PathConfig::BrownianBridge);
        doob_cfm.drift = Some(DriftKind::DoobForward);
        assert!(doob_cfm.validate().is_ok());
        let mut wrong = small(Instantiation::Imf, 1.0, 1.0);
        wrong.drift = Some(DriftKind::Kinetic);
        assert!(wrong.validate().is_err());
    }

    #[test]
    fn zero_iterations_leave_zero_nets() {
        let mut c = small(Instantiation::Dsbm, 1.0, 1.0);
        c.outer_iters = 0;
        let out = run(&c, &point(0.0), &point(1.0)).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.state.forward.net.forward(0.3, &[0.7]).unwrap(), vec![0.0]);
        assert_eq!(out.state.reverse.unwrap().net.forward(0.3, &[0.7]).unwrap(), vec![0.0]);
    }

    #[test]
    fn zero_transport_learns_a_small_drift() {
        for inst in [
            Instantiation::CfmIndependent,
            Instantiation::OtCfm,
            Instantiation::SbCfm,
            Instantiation::Imf,
            Instantiation::Dsbm,
        ] {
            let sigma = if inst.is_schrodinger() { 1.0 } else { 0.0 };
            let mut c = small(inst, sigma, 1.0);
            c.inner_steps = 5000;
            c.batch_size = 128;
            c.net.hidden = vec![32, 32];
            c.t_clip = 0.05;
            c.optim = OptimConfig { lr: 1e-2, lr_final: Some(1e-6), decay_over_run: false };
            let out = run(&c, &point(0.0), &point(0.0)).unwrap();
            for t in [0.1, 0.5, 0.9] {
                let v = out.state.forward.net.forward(t, &[0.0]).unwrap()[0];
                assert!(v.abs() < 0.05, "{inst:?} t={t} v={v}");
            }
        }
    }

    #[test]
    fn independent_cfm_with_doob_reproduces_first_imf_iteration() {
        let imf = small(Instantiation::Imf, 1.0, 1.0);
        let mut cfm = imf.clone();
        cfm.instantiation = Instantiation::CfmIndependent;
        cfm.path = Some(PathConfig::BrownianBridge);
        cfm.drift = Some(DriftKind::DoobForward);
        let src = EndpointDistribution::standard_normal(1);
        let dst = EndpointDistribution::Gaussian { mean: vec![4.0], var: vec![1.0] };
        let a = run(&imf, &src, &dst).unwrap();
        let b = run(&cfm, &src, &dst).unwrap();
        assert_eq!(a.state.logs, b.state.logs);
        assert_eq!(a.state.forward, b.state.forward);
    }

    #[test]
    fn dsbm_alternates_networks_and_origins() {
        let mut c = small(Instantiation::Dsbm, 1.0, 1.0);
        c.inner_steps = 20;
        let src = EndpointDistribution::standard_normal(1);
        let dst = EndpointDistribution::Gaussian { mean: vec![2.0], var: vec![1.0] };
        let s0 = src.sample(128, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let s1 = dst.sample(128, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut state = UbaState::new(&c, &mut rng);
        let mut snapshots = Vec::new();
        let mut origins = Vec::new();
        for _ in 0..3 {
            uba_iteration(&mut state, &c, &s0, &s1, &mut rng).unwrap();
            snapshots.push(state.clone());
            origins.push(state.last_origin);
        }
        assert_eq!(
            origins,
            vec![
                PairOrigin::MiniBatch(CouplingKind::Independent),
                PairOrigin::ForwardModel,
                PairOrigin::ReverseModel
            ]
        );
        // Iteration 1 trains only the reverse net, iteration 2 only the forward net.
        assert_eq!(snapshots[0].forward, snapshots[1].forward);
        assert_ne!(snapshots[0].reverse, snapshots[1].reverse);
        assert_ne!(snapshots[1].forward, snapshots[2].forward);
        assert_eq!(snapshots[1].reverse, snapshots[2].reverse);
    }

    #[test]
    fn metrics_per_iteration() {
        let mut c = small(Instantiation::Dsbm, 1.0, 1.0);
        c.outer_iters = 3;
        c.inner_steps = 20;
        let out = run(&c, &point(0.0), &point(1.0)).unwrap();
        let names: Vec<&str> = out.history.iter().filter(|r| r.iteration == 2).map(|r| r.name.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "train_loss",
                "energy_distance",
                "coupling_cov",
                "kinetic_energy",
                "energy_distance_reverse",
                "coupling_cov_reverse"
            ]
        );
        assert_eq!(metric_series(&out.history, "energy_distance").len(), 3);
        let mut ode = small(Instantiation::OtCfm, 0.0, 1.0);
        ode.outer_iters = 2;
        ode.coupling_refresh = CouplingRefresh::PerOuterIteration;
        ode.refresh_n = 64;
        let out = run(&ode, &point(0.0), &point(1.0)).unwrap();
        assert!(out.history.iter().all(|r| r.name != "kinetic_energy"));
    }

    #[test]
    fn config_json_round_trip() {
        let json = r#"{"instantiation":"ot_cfm","diffusion":{"sigma":0.0,"sigma_ref":1.0,"dim":2}}"#;
        let c: UbaConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c, UbaConfig::new(Instantiation::OtCfm, DiffusionConfig { sigma: 0.0, sigma_ref: 1.0, dim: 2 }));
        let text = serde_json::to_string(&c).unwrap();
        let back: UbaConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
        assert!(serde_json::from_str::<UbaConfig>(r#"{"instantiation":"imf","diffusion":{"sigma":1,"sigma_ref":1,"dim":1},"bogus":1}"#).is_err());
    }
}
