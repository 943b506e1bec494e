//! Toy endpoint distributions as seeded samplers.
//!
//! Parameterizations:
//! - `two_moons`: outer arc `(cos θ, sin θ)` and inner arc
//!   `(1 − cos θ, 0.5 − sin θ)` with `θ ~ U[0, π]`, plus isotropic Gaussian
//!   noise (default 0.05).
//! - `checkerboard`: uniform over the 8 cells of a 4×4 board on `[−4, 4]²`
//!   whose row and column indices have even sum.
//! - [`eight_gaussians`]: ring of radius 4, component std 0.3.
//! - `file`: CSV with one point per row and no header, resampled with
//!   replacement.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::batch::SampleBatch;
use crate::error::{Error, Result};

const WEIGHT_TOL: f64 = 1e-9;

fn default_moons_noise() -> f64 {
    0.05
}

/// Endpoint distribution description, tagged by `kind` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EndpointDistribution {
    /// `N(mean, diag(var))`.
    Gaussian { mean: Vec<f64>, var: Vec<f64> },
    GaussianMixture {
        means: Vec<Vec<f64>>,
        vars: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
    TwoMoons {
        #[serde(default = "default_moons_noise")]
        noise: f64,
    },
    Checkerboard,
    PointMass { point: Vec<f64> },
    File { path: PathBuf },
}

/// Eight isotropic Gaussians evenly spaced on a circle.
pub fn eight_gaussians(radius: f64, std: f64) -> EndpointDistribution {
    let means = (0..8)
        .map(|k| {
            let a = k as f64 * std::f64::consts::FRAC_PI_4;
            vec![radius * a.cos(), radius * a.sin()]
        })
        .collect();
    EndpointDistribution::GaussianMixture {
        means,
        vars: vec![vec![std * std; 2]; 8],
        weights: vec![0.125; 8],
    }
}

/// The ring used by the bundled examples: radius 4, std 0.3.
pub fn eight_gaussians_default() -> EndpointDistribution {
    eight_gaussians(4.0, 0.3)
}

impl EndpointDistribution {
    /// Standard normal in `dim` dimensions.
    pub fn standard_normal(dim: usize) -> Self {
        Self::Gaussian {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    /// Checks parameters; file distributions are checked when loaded.
    pub fn validate(&self) -> Result<()> {
        let positive = |v: &[f64], what: &str| -> Result<()> {
            if v.iter().all(|s| s.is_finite() && *s > 0.0) {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} must be positive and finite")))
            }
        };
        let finite = |v: &[f64], what: &str| -> Result<()> {
            if v.iter().all(|s| s.is_finite()) {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} must be finite")))
            }
        };
        match self {
            Self::Gaussian { mean, var } => {
                if mean.is_empty() || mean.len() != var.len() {
                    return Err(Error::Config("gaussian mean and var must have equal, nonzero length".into()));
                }
                finite(mean, "gaussian mean")?;
                positive(var, "gaussian var")
            }
            Self::GaussianMixture { means, vars, weights } => {
                if means.is_empty() || means.len() != vars.len() || means.len() != weights.len() {
                    return Err(Error::Config(
                        "gaussian_mixture needs equally many means, vars and weights".into(),
                    ));
                }
                let d = means[0].len();
                if d == 0 || means.iter().chain(vars.iter()).any(|v| v.len() != d) {
                    return Err(Error::Config("gaussian_mixture components differ in dimension".into()));
                }
                for (m, v) in means.iter().zip(vars) {
                    finite(m, "gaussian_mixture mean")?;
                    positive(v, "gaussian_mixture var")?;
                }
                if weights.iter().any(|w| !w.is_finite() || *w < 0.0)
                    || (weights.iter().sum::<f64>() - 1.0).abs() > WEIGHT_TOL
                {
                    return Err(Error::Config("gaussian_mixture weights must be nonnegative and sum to 1".into()));
                }
                Ok(())
            }
            Self::TwoMoons { noise } => {
                if noise.is_finite() && *noise >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::Config("two_moons noise must be nonnegative".into()))
                }
            }
            Self::Checkerboard => Ok(()),
            Self::PointMass { point } => {
                if point.is_empty() {
                    return Err(Error::Config("point_mass needs a point".into()));
                }
                finite(point, "point_mass point")
            }
            Self::File { .. } => Ok(()),
        }
    }

    /// State dimension, reading the file for `file` distributions.
    pub fn dim(&self) -> Result<usize> {
        Ok(match self {
            Self::Gaussian { mean, .. } => mean.len(),
            Self::GaussianMixture { means, .. } => means.first().map_or(0, Vec::len),
            Self::TwoMoons { .. } | Self::Checkerboard => 2,
            Self::PointMass { point } => point.len(),
            Self::File { .. } => self.sampler()?.dim(),
        })
    }

    /// Validates and, for `file`, loads the data once.
    pub fn sampler(&self) -> Result<Sampler> {
        self.validate()?;
        let inner = match self {
            Self::File { path } => {
                let file = File::open(path)
                    .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
                Inner::Empirical(crate::io::read_points_csv(BufReader::new(file))?)
            }
            other => Inner::Analytic(other.clone()),
        };
        Ok(Sampler { inner })
    }

    /// `n` i.i.d. draws. Loads the file on every call for `file`; prefer
    /// [`EndpointDistribution::sampler`] for repeated sampling.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<SampleBatch> {
        self.sampler()?.sample(n, rng)
    }
}

#[derive(Debug, Clone)]
enum Inner {
    Analytic(EndpointDistribution),
    Empirical(SampleBatch),
}

/// A validated distribution ready for repeated sampling.
#[derive(Debug, Clone)]
pub struct Sampler {
    inner: Inner,
}

impl Sampler {
    pub fn dim(&self) -> usize {
        match &self.inner {
            Inner::Analytic(d) => d.dim().expect("analytic distributions know their dimension"),
            Inner::Empirical(b) => b.dim(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<SampleBatch> {
        if n == 0 {
            return Err(Error::Data("sample size must be positive".into()));
        }
        let d = self.dim();
        let mut out = Array2::<f64>::zeros((n, d));
        match &self.inner {
            Inner::Empirical(batch) => {
                for mut row in out.rows_mut() {
                    row.assign(&batch.row(rng.random_range(0..batch.len())));
                }
            }
            Inner::Analytic(dist) => {
                for mut row in out.rows_mut() {
                    let point = draw(dist, rng);
                    row.assign(&ndarray::ArrayView1::from(&point[..]));
                }
            }
        }
        SampleBatch::new(out)
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn draw<R: Rng + ?Sized>(dist: &EndpointDistribution, rng: &mut R) -> Vec<f64> {
    match dist {
        EndpointDistribution::Gaussian { mean, var } => {
            mean.iter().zip(var).map(|(m, v)| m + v.sqrt() * normal(rng)).collect()
        }
        EndpointDistribution::GaussianMixture { means, vars, weights } => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut k = weights.len() - 1;
            for (j, w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    k = j;
                    break;
                }
            }
            means[k].iter().zip(&vars[k]).map(|(m, v)| m + v.sqrt() * normal(rng)).collect()
        }
        EndpointDistribution::TwoMoons { noise } => {
            let theta = rng.random::<f64>() * std::f64::consts::PI;
            let (x, y) = if rng.random::<bool>() {
                (theta.cos(), theta.sin())
            } else {
                (1.0 - theta.cos(), 0.5 - theta.sin())
            };
            vec![x + noise * normal(rng), y + noise * normal(rng)]
        }
        EndpointDistribution::Checkerboard => {
            let cell = rng.random_range(0..8usize);
            let row = cell / 2;
            let col = 2 * (cell % 2) + row % 2;
            let x = -4.0 + 2.0 * col as f64 + 2.0 * rng.random::<f64>();
            let y = -4.0 + 2.0 * row as f64 + 2.0 * rng.random::<f64>();
            vec![x, y]
        }
        EndpointDistribution::PointMass { point } => point.clone(),
        EndpointDistribution::File { .. } => unreachable!("file distributions sample through Inner::Empirical"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn point_mass_rows_are_constant() {
        let d = EndpointDistribution::PointMass { point: vec![1.5, -2.0] };
        let b = d.sample(10, &mut rng(0)).unwrap();
        assert!(b.points().rows().into_iter().all(|r| r.to_vec() == vec![1.5, -2.0]));
    }

    #[test]
    fn gaussian_mean_within_three_standard_errors() {
        let (m, s) = ([1.0, -3.0], [2.0, 0.5]);
        let d = EndpointDistribution::Gaussian {
            mean: m.to_vec(),
            var: s.iter().map(|v| v * v).collect(),
        };
        let n = 100_000;
        let b = d.sample(n, &mut rng(1)).unwrap();
        let mean = b.mean();
        let var = b.variance();
        for k in 0..2 {
            assert!((mean[k] - m[k]).abs() < 3.0 * s[k] / (n as f64).sqrt());
            // Var of the sample variance of a normal: 2σ⁴/(n−1).
            let se = (2.0f64).sqrt() * s[k] * s[k] / ((n - 1) as f64).sqrt();
            assert!((var[k] - s[k] * s[k]).abs() < 3.0 * se);
        }
    }

    #[test]
    fn mixture_component_frequencies() {
        let d = EndpointDistribution::GaussianMixture {
            means: vec![vec![-10.0], vec![10.0]],
            vars: vec![vec![1.0], vec![1.0]],
            weights: vec![0.25, 0.75],
        };
        let n = 40_000;
        let b = d.sample(n, &mut rng(2)).unwrap();
        let right = b.points().iter().filter(|v| **v > 0.0).count() as f64 / n as f64;
        let se = (0.75f64 * 0.25 / n as f64).sqrt();
        assert!((right - 0.75).abs() < 3.0 * se);
    }

    #[test]
    fn two_moons_bounding_box() {
        let b = EndpointDistribution::TwoMoons { noise: 0.05 }.sample(10_000, &mut rng(3)).unwrap();
        for r in b.points().rows() {
            assert!((-1.5..=2.5).contains(&r[0]) && (-1.0..=1.5).contains(&r[1]), "{r}");
        }
    }

    #[test]
    fn checkerboard_occupies_even_cells() {
        let b = EndpointDistribution::Checkerboard.sample(20_000, &mut rng(4)).unwrap();
        let mut counts = [0usize; 16];
        for r in b.points().rows() {
            let col = ((r[0] + 4.0) / 2.0).floor() as usize;
            let row = ((r[1] + 4.0) / 2.0).floor() as usize;
            assert_eq!((row + col) % 2, 0, "point {r} in an empty cell");
            counts[row * 4 + col] += 1;
        }
        let filled: Vec<usize> = counts.iter().copied().filter(|c| *c > 0).collect();
        assert_eq!(filled.len(), 8);
        for c in filled {
            assert!((c as f64 - 2500.0).abs() < 5.0 * 2500f64.sqrt());
        }
    }

    #[test]
    fn eight_gaussians_moments() {
        let b = eight_gaussians_default().sample(40_000, &mut rng(5)).unwrap();
        let mean = b.mean();
        assert!(mean.iter().all(|m| m.abs() < 0.1));
        // Per coordinate: E[r² cos²] + s² = 16/2 + 0.09.
        for v in b.variance() {
            assert!((v - 8.09).abs() < 0.25, "variance {v}");
        }
    }

    #[test]
    fn seeded_draws_are_reproducible() {
        let d = EndpointDistribution::TwoMoons { noise: 0.05 };
        assert_eq!(d.sample(50, &mut rng(7)).unwrap(), d.sample(50, &mut rng(7)).unwrap());
    }

    #[test]
    fn file_kind_resamples_rows_and_reports_bad_lines() {
        let mut good = tempfile::NamedTempFile::new().unwrap();
        writeln!(good, "1,2\n3,4\n5,6").unwrap();
        let d = EndpointDistribution::File { path: good.path().into() };
        assert_eq!(d.dim().unwrap(), 2);
        let b = d.sample(100, &mut rng(8)).unwrap();
        for r in b.points().rows() {
            assert!([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]].iter().any(|p| r.to_vec() == p.to_vec()));
        }

        let mut bad = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad, "1,2\n3,x\n").unwrap();
        let d = EndpointDistribution::File { path: bad.path().into() };
        assert!(matches!(d.sample(1, &mut rng(0)), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn validation_and_serde() {
        let bad = EndpointDistribution::GaussianMixture {
            means: vec![vec![0.0], vec![1.0]],
            vars: vec![vec![1.0], vec![1.0]],
            weights: vec![0.5, 0.4],
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        assert!(EndpointDistribution::Gaussian { mean: vec![0.0], var: vec![0.0] }.validate().is_err());
        let json = r#"{"kind":"two_moons"}"#;
        let d: EndpointDistribution = serde_json::from_str(json).unwrap();
        assert_eq!(d, EndpointDistribution::TwoMoons { noise: 0.05 });
        let g = eight_gaussians_default();
        let back: EndpointDistribution = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(back, g);
        assert!(EndpointDistribution::Checkerboard.sample(0, &mut rng(0)).is_err());
    }
}
