use ndarray::Zip;

use super::{DriftNetwork, Gradients, Layer};

/// Adam moment accumulators mirroring the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    first: Vec<Layer>,
    second: Vec<Layer>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(net: &DriftNetwork) -> Self {
        let zeros = || {
            net.layers()
                .iter()
                .map(|l| Layer::zeros(l.weight.nrows(), l.weight.ncols()))
                .collect::<Vec<_>>()
        };
        Self {
            first: zeros(),
            second: zeros(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of `net` in place.
pub fn optimizer_step(net: &mut DriftNetwork, state: &mut OptimizerState, grads: &Gradients, lr: f64) {
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: &f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    };
    for (((layer, m), v), g) in net
        .layers_mut()
        .iter_mut()
        .zip(&mut state.first)
        .zip(&mut state.second)
        .zip(&grads.layers)
    {
        Zip::from(&mut layer.weight)
            .and(&mut m.weight)
            .and(&mut v.weight)
            .and(&g.weight)
            .for_each(update);
        Zip::from(&mut layer.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .and(&g.bias)
            .for_each(update);
    }
}
