//! Log-domain Sinkhorn iterations for entropic optimal transport.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Stopping rule for [`solve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions {
    /// Stop once the largest marginal violation falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Record the violation every this many iterations.
    pub checkpoint_every: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 10_000,
            checkpoint_every: 10,
        }
    }
}

/// Convergence diagnostics of one Sinkhorn solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornReport {
    pub iterations: usize,
    /// Largest absolute marginal violation of the returned plan.
    pub violation: f64,
    /// Violation recorded at every checkpoint.
    pub checkpoints: Vec<f64>,
}

/// Violations above this after `max_iter` iterations are an error.
pub const CONVERGENCE_FLOOR: f64 = 1e-6;

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic plan `argmin Σ p c - ε H(p)` with marginals `a`, `b`.
///
/// Potentials `f`, `g` are updated in log space with max-stabilized
/// log-sum-exp, so small `ε` relative to the costs does not underflow.
pub fn solve(
    cost: ArrayView2<'_, f64>,
    a: ArrayView1<'_, f64>,
    b: ArrayView1<'_, f64>,
    epsilon: f64,
    opts: &SinkhornOptions,
) -> Result<(Array2<f64>, SinkhornReport)> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Domain(format!("entropic regularization must be positive, got {epsilon}")));
    }
    let (m, n) = cost.dim();
    let scaled = cost.mapv(|c| -c / epsilon);
    let log_a: Array1<f64> = a.mapv(f64::ln);
    let log_b: Array1<f64> = b.mapv(f64::ln);
    // Potentials divided by ε.
    let mut f = Array1::<f64>::zeros(m);
    let mut g = Array1::<f64>::zeros(n);

    let plan = |f: &Array1<f64>, g: &Array1<f64>| {
        Array2::from_shape_fn((m, n), |(i, j)| (f[i] + g[j] + scaled[[i, j]]).exp())
    };
    let violation = |p: &Array2<f64>| {
        let rows = p.sum_axis(ndarray::Axis(1));
        let cols = p.sum_axis(ndarray::Axis(0));
        let vr = rows.iter().zip(a.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let vc = cols.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        vr.max(vc)
    };

    let every = opts.checkpoint_every.max(1);
    let mut checkpoints = Vec::new();
    let mut last = f64::INFINITY;
    for iter in 1..=opts.max_iter {
        for j in 0..n {
            let col = scaled.column(j);
            g[j] = if log_b[j] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                log_b[j] - log_sum_exp(col.iter().zip(f.iter()).map(|(s, fi)| s + fi))
            };
        }
        for i in 0..m {
            let row = scaled.row(i);
            f[i] = if log_a[i] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                log_a[i] - log_sum_exp(row.iter().zip(g.iter()).map(|(s, gj)| s + gj))
            };
        }
        let p = plan(&f, &g);
        last = violation(&p);
        if iter % every == 0 {
            checkpoints.push(last);
        }
        if last < opts.tol {
            return Ok((
                p,
                SinkhornReport {
                    iterations: iter,
                    violation: last,
                    checkpoints,
                },
            ));
        }
    }
    if last > CONVERGENCE_FLOOR || !last.is_finite() {
        return Err(Error::Convergence {
            iterations: opts.max_iter,
            violation: last,
        });
    }
    Ok((
        plan(&f, &g),
        SinkhornReport {
            iterations: opts.max_iter,
            violation: last,
            checkpoints,
        },
    ))
}
