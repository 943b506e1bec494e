//! Couplings `Q(x0, x1)` between two sample batches.
//!
//! A [`Coupling`] is a discrete joint distribution over the rows of two
//! batches. The constructors cover the product coupling, the exact
//! mini-batch OT plan, the entropic (Sinkhorn) plan with regularization
//! `ε = 2σ_ref²`, and the paired coupling induced by simulating a model.

pub mod assignment;
pub mod sinkhorn;
pub mod transport;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use sinkhorn::{SinkhornOptions, SinkhornReport};

use crate::batch::SampleBatch;
use crate::error::{check_len, Error, Result};

/// How a coupling was built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    Independent,
    ExactOt,
    EntropicOt,
    ModelInduced,
}

#[derive(Debug, Clone, PartialEq)]
enum Mass {
    Dense(Array2<f64>),
    /// Row `k` of the first batch is paired with row `k` of the second.
    Paired(Array1<f64>),
}

/// Discrete joint distribution over `batch0 × batch1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    batch0: SampleBatch,
    batch1: SampleBatch,
    mass: Mass,
    kind: CouplingKind,
}

/// Endpoint pairs stacked row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub x0: Array2<f64>,
    pub x1: Array2<f64>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.x0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x0.ncols()
    }
}

/// Squared Euclidean cost matrix `c_ij = ||x0_i - x1_j||²`.
pub fn squared_distances(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| {
        a.row(i)
            .iter()
            .zip(b.row(j).iter())
            .map(|(p, q)| (p - q) * (p - q))
            .sum()
    })
}

fn check_pair(batch0: &SampleBatch, batch1: &SampleBatch) -> Result<()> {
    if batch0.is_empty() || batch1.is_empty() {
        return Err(Error::Domain("coupling needs nonempty batches".into()));
    }
    check_len("coupling batch dimension", batch0.dim(), batch1.dim())
}

impl Coupling {
    /// Wrap an explicit mass matrix, checking the marginal constraints.
    pub fn from_mass(
        batch0: SampleBatch,
        batch1: SampleBatch,
        mass: Array2<f64>,
        kind: CouplingKind,
    ) -> Result<Self> {
        check_pair(&batch0, &batch1)?;
        if mass.dim() != (batch0.len(), batch1.len()) {
            return Err(Error::Shape {
                context: "coupling mass rows",
                expected: batch0.len(),
                got: mass.nrows(),
            });
        }
        let c = Self {
            batch0,
            batch1,
            mass: Mass::Dense(mass),
            kind,
        };
        c.validate(1e-6)?;
        Ok(c)
    }

    /// Row `k` of `batch0` paired with row `k` of `batch1`, mass `1/n` each.
    pub fn paired(batch0: SampleBatch, batch1: SampleBatch, kind: CouplingKind) -> Result<Self> {
        check_pair(&batch0, &batch1)?;
        check_len("paired coupling", batch0.len(), batch1.len())?;
        if !(batch0.is_uniform() && batch1.is_uniform()) {
            return Err(Error::Domain("paired coupling needs uniform batches".into()));
        }
        let n = batch0.len();
        Ok(Self {
            batch0,
            batch1,
            mass: Mass::Paired(Array1::from_elem(n, 1.0 / n as f64)),
            kind,
        })
    }

    pub fn kind(&self) -> CouplingKind {
        self.kind
    }

    pub fn batch0(&self) -> &SampleBatch {
        &self.batch0
    }

    pub fn batch1(&self) -> &SampleBatch {
        &self.batch1
    }

    pub fn is_paired(&self) -> bool {
        matches!(self.mass, Mass::Paired(_))
    }

    /// Dense `|B0| × |B1|` mass matrix.
    pub fn mass_matrix(&self) -> Array2<f64> {
        match &self.mass {
            Mass::Dense(m) => m.clone(),
            Mass::Paired(w) => Array2::from_diag(w),
        }
    }

    /// Nonzero cells as `(i, j, mass)`, row-major.
    pub fn support(&self) -> Vec<(usize, usize, f64)> {
        match &self.mass {
            Mass::Dense(m) => m
                .indexed_iter()
                .filter(|(_, &p)| p > 0.0)
                .map(|((i, j), &p)| (i, j, p))
                .collect(),
            Mass::Paired(w) => w
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(k, &p)| (k, k, p))
                .collect(),
        }
    }

    pub fn row_sums(&self) -> Array1<f64> {
        match &self.mass {
            Mass::Dense(m) => m.sum_axis(Axis(1)),
            Mass::Paired(w) => w.clone(),
        }
    }

    pub fn col_sums(&self) -> Array1<f64> {
        match &self.mass {
            Mass::Dense(m) => m.sum_axis(Axis(0)),
            Mass::Paired(w) => w.clone(),
        }
    }

    /// Largest deviation of the row/column sums from the batch weights.
    pub fn marginal_violation(&self) -> f64 {
        let dev = |s: Array1<f64>, w: Array1<f64>| {
            s.iter().zip(w.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        dev(self.row_sums(), self.batch0.weights()).max(dev(self.col_sums(), self.batch1.weights()))
    }

    /// Check nonnegativity, unit total mass (1e-9) and marginals (`tol`).
    pub fn validate(&self, tol: f64) -> Result<()> {
        let (min, total) = match &self.mass {
            Mass::Dense(m) => (m.iter().copied().fold(f64::INFINITY, f64::min), m.sum()),
            Mass::Paired(w) => (w.iter().copied().fold(f64::INFINITY, f64::min), w.sum()),
        };
        if !(min >= 0.0) {
            return Err(Error::Domain(format!("coupling has negative or NaN mass {min}")));
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("coupling total mass {total}, expected 1")));
        }
        let v = self.marginal_violation();
        if v > tol {
            return Err(Error::Domain(format!("coupling marginal violation {v:e} > {tol:e}")));
        }
        Ok(())
    }

    /// Expected squared transport cost `Σ p_ij ||x0_i - x1_j||²`.
    pub fn transport_cost(&self) -> f64 {
        self.support()
            .into_iter()
            .map(|(i, j, p)| {
                let d: f64 = self
                    .batch0
                    .row(i)
                    .iter()
                    .zip(self.batch1.row(j).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                p * d
            })
            .sum()
    }

    /// Per-coordinate covariance `Cov(x0_k, x1_k)` under the coupling.
    pub fn cross_covariance(&self) -> Array1<f64> {
        let m0 = self.batch0.points().t().dot(&self.row_sums());
        let m1 = self.batch1.points().t().dot(&self.col_sums());
        let mut acc = Array1::<f64>::zeros(self.batch0.dim());
        for (i, j, p) in self.support() {
            let a = &self.batch0.row(i) - &m0;
            let b = &self.batch1.row(j) - &m1;
            acc += &(a * b * p);
        }
        acc
    }

    /// Draw `n` i.i.d. cells with probability `mass[i][j]`.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<(usize, usize)> {
        match &self.mass {
            Mass::Paired(w) if self.batch0.is_uniform() => {
                let len = w.len();
                (0..n)
                    .map(|_| {
                        let k = rng.random_range(0..len);
                        (k, k)
                    })
                    .collect()
            }
            _ => {
                let cells = self.support();
                let mut cdf = Vec::with_capacity(cells.len());
                let mut acc = 0.0;
                for &(_, _, p) in &cells {
                    acc += p;
                    cdf.push(acc);
                }
                (0..n)
                    .map(|_| {
                        let u = rng.random::<f64>() * acc;
                        let k = cdf.partition_point(|&c| c <= u).min(cells.len() - 1);
                        (cells[k].0, cells[k].1)
                    })
                    .collect()
            }
        }
    }

    /// Draw `n` endpoint pairs from the coupling.
    pub fn sample_pairs<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> PairBatch {
        let idx = self.sample_indices(n, rng);
        let (i0, i1): (Vec<usize>, Vec<usize>) = idx.into_iter().unzip();
        PairBatch {
            x0: self.batch0.points().select(Axis(0), &i0),
            x1: self.batch1.points().select(Axis(0), &i1),
        }
    }
}

/// Product coupling `mass[i][j] = w0_i · w1_j`.
pub fn independent_coupling(batch0: &SampleBatch, batch1: &SampleBatch) -> Result<Coupling> {
    check_pair(batch0, batch1)?;
    let w0 = batch0.weights();
    let w1 = batch1.weights();
    let mass = Array2::from_shape_fn((w0.len(), w1.len()), |(i, j)| w0[i] * w1[j]);
    Ok(Coupling {
        batch0: batch0.clone(),
        batch1: batch1.clone(),
        mass: Mass::Dense(mass),
        kind: CouplingKind::Independent,
    })
}

/// Exact mini-batch OT plan under squared Euclidean cost, uniform marginals.
///
/// Equal batch sizes are solved as an assignment problem (mass `1/n` on a
/// permutation). Unequal sizes go through the general transport LP, which
/// is considerably slower.
pub fn exact_ot_coupling(batch0: &SampleBatch, batch1: &SampleBatch) -> Result<Coupling> {
    check_pair(batch0, batch1)?;
    if !(batch0.is_uniform() && batch1.is_uniform()) {
        return Err(Error::Domain("exact OT coupling needs uniform weights".into()));
    }
    let (m, n) = (batch0.len(), batch1.len());
    let cost = squared_distances(batch0.points(), batch1.points());
    let mass = if m == n {
        let col = assignment::solve(cost.view());
        let mut mass = Array2::<f64>::zeros((n, n));
        for (i, j) in col.into_iter().enumerate() {
            mass[[i, j]] = 1.0 / n as f64;
        }
        mass
    } else {
        // Each row ships n units and each column receives m units.
        let flow = transport::solve(cost.view(), &vec![n as u64; m], &vec![m as u64; n]);
        let total = (m * n) as f64;
        flow.mapv(|f| f as f64 / total)
    };
    Ok(Coupling {
        batch0: batch0.clone(),
        batch1: batch1.clone(),
        mass: Mass::Dense(mass),
        kind: CouplingKind::ExactOt,
    })
}

/// Entropic OT plan with regularization `ε = 2σ_ref²`, by log-domain
/// Sinkhorn scaled to the batch weights.
pub fn sinkhorn_coupling(
    batch0: &SampleBatch,
    batch1: &SampleBatch,
    sigma_ref: f64,
    opts: &SinkhornOptions,
) -> Result<(Coupling, SinkhornReport)> {
    check_pair(batch0, batch1)?;
    if !(sigma_ref > 0.0) {
        return Err(Error::Domain(format!("sigma_ref must be positive, got {sigma_ref}")));
    }
    let cost = squared_distances(batch0.points(), batch1.points());
    let (w0, w1) = (batch0.weights(), batch1.weights());
    let (mass, report) = sinkhorn::solve(
        cost.view(),
        w0.view(),
        w1.view(),
        2.0 * sigma_ref * sigma_ref,
        opts,
    )?;
    Ok((
        Coupling {
            batch0: batch0.clone(),
            batch1: batch1.clone(),
            mass: Mass::Dense(mass),
            kind: CouplingKind::EntropicOt,
        },
        report,
    ))
}

/// Free-function form of [`Coupling::sample_pairs`].
pub fn sample_pairs<R: Rng + ?Sized>(coupling: &Coupling, n: usize, rng: &mut R) -> PairBatch {
    coupling.sample_pairs(n, rng)
}
