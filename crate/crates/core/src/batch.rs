//! Point clouds drawn from the endpoint distributions.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{check_len, Error, Result};

/// A set of `n` points in `d` dimensions with optional probability weights.
///
/// Without explicit weights every row carries mass `1/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    points: Array2<f64>,
    weights: Option<Array1<f64>>,
}

impl SampleBatch {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("sample batch contains non-finite entries".into()));
        }
        Ok(Self {
            points,
            weights: None,
        })
    }

    /// Weighted batch. Weights must be nonnegative and sum to one within 1e-12.
    pub fn with_weights(points: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        check_len("sample weights", points.nrows(), weights.len())?;
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Data("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Data(format!("weights sum to {total}, expected 1")));
        }
        let mut batch = Self::new(points)?;
        batch.weights = Some(weights);
        Ok(batch)
    }

    /// Build from row vectors; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(rows.len() * d);
        for row in rows {
            check_len("sample row", d, row.len())?;
            flat.extend_from_slice(row);
        }
        let points = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| Error::Data(e.to_string()))?;
        Self::new(points)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn into_points(self) -> Array2<f64> {
        self.points
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    pub fn is_uniform(&self) -> bool {
        self.weights.is_none()
    }

    /// Probability weights, materialized as uniform when none were given.
    pub fn weights(&self) -> Array1<f64> {
        match &self.weights {
            Some(w) => w.clone(),
            None => Array1::from_elem(self.len(), 1.0 / self.len() as f64),
        }
    }

    /// Weighted per-coordinate mean.
    pub fn mean(&self) -> Array1<f64> {
        let w = self.weights();
        self.points
            .axis_iter(Axis(0))
            .zip(w.iter())
            .fold(Array1::zeros(self.dim()), |acc, (row, wi)| acc + &row * *wi)
    }

    /// Unbiased per-coordinate variance (uniform weights) or the weighted
    /// population variance otherwise.
    pub fn variance(&self) -> Array1<f64> {
        let mean = self.mean();
        let n = self.len() as f64;
        match &self.weights {
            None => {
                let mut acc = Array1::<f64>::zeros(self.dim());
                for row in self.points.axis_iter(Axis(0)) {
                    let diff = &row - &mean;
                    acc += &(&diff * &diff);
                }
                acc / (n - 1.0).max(1.0)
            }
            Some(w) => {
                let mut acc = Array1::<f64>::zeros(self.dim());
                for (row, wi) in self.points.axis_iter(Axis(0)).zip(w.iter()) {
                    let diff = &row - &mean;
                    acc += &(&diff * &diff * *wi);
                }
                acc
            }
        }
    }

    /// Rows selected by index, uniform weights.
    pub fn select(&self, indices: &[usize]) -> SampleBatch {
        SampleBatch {
            points: self.points.select(Axis(0), indices),
            weights: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_non_finite() {
        assert!(SampleBatch::new(array![[0.0, f64::NAN]]).is_err());
    }

    #[test]
    fn weights_must_sum_to_one() {
        let pts = array![[0.0], [1.0]];
        assert!(SampleBatch::with_weights(pts.clone(), array![0.3, 0.6]).is_err());
        assert!(SampleBatch::with_weights(pts.clone(), array![-0.1, 1.1]).is_err());
        let b = SampleBatch::with_weights(pts, array![0.25, 0.75]).unwrap();
        assert!((b.mean()[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn uniform_weights_by_default() {
        let b = SampleBatch::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(b.weights(), array![0.5, 0.5]);
        assert_eq!(b.mean(), array![2.0, 3.0]);
        assert_eq!(b.variance(), array![2.0, 2.0]);
    }

    #[test]
    fn ragged_rows_are_a_shape_error() {
        let err = SampleBatch::from_rows(&[vec![1.0], vec![1.0, 2.0]]).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }
}
