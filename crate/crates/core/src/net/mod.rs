//! The drift approximator `v_θ(t, x)`: a multilayer perceptron with
//! hand-written reverse-mode gradients, an Adam optimizer and the
//! conditional regression trainer.
//!
//! The network input is the raw time `t` concatenated with the state `x`;
//! hidden layers use the chosen activation and the output layer is linear.

mod adam;
mod train;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::{optimizer_step, OptimizerState};
pub use train::{train_regression, LrSchedule, PairSource, TrainOptions, TrainingLog};

use crate::error::{check_len, Error, Result};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    #[default]
    Silu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Silu => z / (1.0 + (-z).exp()),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let th = z.tanh();
                1.0 - th * th
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Silu => "silu",
        }
    }
}

/// Affine layer `y = x W + b` with `W` stored as `(fan_in, fan_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.weight.nrows(), self.weight.ncols())
    }
}

/// Gradients with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.iter().chain(l.bias.iter()).map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// One regression minibatch: inputs `(t_k, x_k)` and targets `u_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionBatch {
    pub t: Array1<f64>,
    pub x: Array2<f64>,
    pub target: Array2<f64>,
}

/// Fixed-architecture MLP mapping `(t, x) ∈ R^{1+d}` to a drift in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftNetwork {
    layers: Vec<Layer>,
    activation: Activation,
}

impl DriftNetwork {
    /// Glorot-uniform hidden layers and a zero output layer, so a fresh
    /// network is the zero drift.
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let sizes = Self::sizes(dim, hidden);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let mut layer = Layer::zeros(fan_in, fan_out);
                if k != last {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    layer.weight.mapv_inplace(|_| rng.random_range(-limit..=limit));
                }
                layer
            })
            .collect();
        Self { layers, activation }
    }

    /// All parameters zero.
    pub fn zeros(dim: usize, hidden: &[usize], activation: Activation) -> Self {
        let layers = Self::sizes(dim, hidden)
            .windows(2)
            .map(|w| Layer::zeros(w[0], w[1]))
            .collect();
        Self { layers, activation }
    }

    /// Assemble from explicit layers; the first layer must take `1 + d` inputs
    /// and produce layers that chain into a `d`-dimensional output.
    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Domain("network needs at least one layer".into()))?;
        let out = layers.last().map_or(0, |l| l.weight.ncols());
        check_len("network input (1 + dim)", out + 1, first.weight.nrows())?;
        for w in layers.windows(2) {
            check_len("network layer chain", w[0].weight.ncols(), w[1].weight.nrows())?;
        }
        for l in &layers {
            check_len("network bias", l.weight.ncols(), l.bias.len())?;
        }
        Ok(Self { layers, activation })
    }

    fn sizes(dim: usize, hidden: &[usize]) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(dim + 1);
        sizes.extend_from_slice(hidden);
        sizes.push(dim);
        sizes
    }

    pub fn dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.ncols())
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// `[1 + d, hidden..., d]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].weight.nrows()];
        s.extend(self.layers.iter().map(|l| l.weight.ncols()));
        s
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn input(t: ArrayView1<'_, f64>, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let (b, d) = x.dim();
        let mut h = Array2::<f64>::zeros((b, d + 1));
        h.column_mut(0).assign(&t);
        h.slice_mut(ndarray::s![.., 1..]).assign(&x);
        h
    }

    fn check_batch(&self, t: ArrayView1<'_, f64>, x: ArrayView2<'_, f64>) -> Result<()> {
        check_len("network batch times", x.nrows(), t.len())?;
        check_len("network input dimension", self.dim(), x.ncols())
    }

    /// Output for a single `(t, x)`.
    pub fn forward(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let xs = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let ts = [t];
        let out = self.forward_batch(ArrayView1::from(&ts[..]), xs)?;
        Ok(out.into_raw_vec_and_offset().0)
    }

    /// Row-wise outputs for a batch of `(t_k, x_k)`.
    pub fn forward_batch(&self, t: ArrayView1<'_, f64>, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_batch(t, x)?;
        let mut h = Self::input(t, x);
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            if k != last {
                let act = self.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            h = z;
        }
        Ok(h)
    }

    /// Outputs for a batch sharing one time value.
    pub fn forward_at(&self, t: f64, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let ts = Array1::from_elem(x.nrows(), t);
        self.forward_batch(ts.view(), x)
    }

    /// Mean over the batch of `||v_θ(t_k, x_k) - u_k||²` and its exact gradient.
    pub fn loss_and_grad(&self, batch: &RegressionBatch) -> Result<(f64, Gradients)> {
        self.check_batch(batch.t.view(), batch.x.view())?;
        if batch.x.nrows() == 0 {
            return Err(Error::Data("empty regression batch".into()));
        }
        if batch.target.dim() != batch.x.dim() {
            return Err(Error::Shape {
                context: "regression targets",
                expected: batch.x.nrows(),
                got: batch.target.nrows(),
            });
        }
        if batch.target.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite regression target".into()));
        }

        // Forward pass keeping pre-activations and layer inputs.
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = Self::input(batch.t.view(), batch.x.view());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            let next = if k != last {
                let act = self.activation;
                z.mapv(|v| act.apply(v))
            } else {
                z.clone()
            };
            inputs.push(h);
            pre.push(z);
            h = next;
        }

        let n = batch.x.nrows() as f64;
        let err = &h - &batch.target;
        let loss = err.iter().map(|e| e * e).sum::<f64>() / n;

        let mut grads: Vec<Layer> = self.layers.iter().map(Layer::zeros_like).collect();
        let mut delta = err * (2.0 / n);
        for k in (0..self.layers.len()).rev() {
            if k != last {
                let act = self.activation;
                Zip::from(&mut delta)
                    .and(&pre[k])
                    .for_each(|d, &z| *d *= act.derivative(z));
            }
            grads[k].weight = inputs[k].t().dot(&delta);
            grads[k].bias = delta.sum_axis(Axis(0));
            if k > 0 {
                delta = delta.dot(&self.layers[k].weight.t());
            }
        }
        Ok((loss, Gradients { layers: grads }))
    }
}

/// Free-function form of [`DriftNetwork::forward`].
pub fn forward(net: &DriftNetwork, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    net.forward(t, x)
}

/// Free-function form of [`DriftNetwork::loss_and_grad`].
pub fn loss_and_grad(net: &DriftNetwork, batch: &RegressionBatch) -> Result<(f64, Gradients)> {
    net.loss_and_grad(batch)
}
