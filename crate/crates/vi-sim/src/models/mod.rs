//! Regression models: ordinary least squares with coefficient inference,
//! and a bagged regression forest with out-of-bag bookkeeping.

mod forest;

pub use forest::{fit_forest, ForestConfig, ForestModel, OobPredictions};

use thiserror::Error;

use crate::numerics::{cholesky, Matrix, NumericsError, SymMatrix};
use crate::stats::student_t_two_sided_p;

#[derive(Debug, Error)]
pub enum ModelError {
    /// The normal equations are singular: some feature is a linear
    /// combination of the others (or of the intercept).
    #[error("design matrix is rank deficient")]
    RankDeficient(#[source] NumericsError),
    /// A prediction input had the wrong number of columns.
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    /// Too few rows to fit the requested model.
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
}

/// A fitted least-squares model with per-coefficient inference.
///
/// `std_errors` and `p_values` run parallel to `coefficients`; the intercept
/// carries its own fields. P-values are two-sided t-tests of a zero
/// coefficient with `dof` degrees of freedom.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub intercept_std_err: f64,
    pub std_errors: Vec<f64>,
    pub intercept_p_value: f64,
    pub p_values: Vec<f64>,
    pub residual_variance: f64,
    pub dof: usize,
}

/// Anything that maps feature rows to predictions.
pub trait Predict {
    fn n_features(&self) -> usize;

    fn predict_row(&self, row: &[f64]) -> f64;

    fn predict(&self, x: &Matrix) -> Result<Vec<f64>, ModelError> {
        if x.cols() != self.n_features() {
            return Err(ModelError::DimensionMismatch {
                expected: self.n_features(),
                got: x.cols(),
            });
        }
        Ok((0..x.rows()).map(|i| self.predict_row(x.row(i))).collect())
    }
}

impl Predict for LinearModel {
    fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }
}

/// Fits least squares with an intercept and computes standard errors and
/// two-sided p-values from the unbiased residual variance.
pub fn fit_ols(x: &Matrix, y: &[f64]) -> Result<LinearModel, ModelError> {
    let n = x.rows();
    let p = x.cols();
    assert_eq!(y.len(), n, "target length must match row count");
    if n < p + 2 {
        return Err(ModelError::TooFewRows { needed: p + 2, got: n });
    }

    // Normal equations on the intercept-augmented design, index 0 = intercept.
    let aug = p + 1;
    let xtx = SymMatrix::from_lower(aug, |i, j| match (i, j) {
        (0, 0) => n as f64,
        (i, 0) => (0..n).map(|k| x.get(k, i - 1)).sum(),
        (i, j) => (0..n).map(|k| x.get(k, i - 1) * x.get(k, j - 1)).sum(),
    });
    let mut xty = vec![0.0; aug];
    for k in 0..n {
        xty[0] += y[k];
        for j in 0..p {
            xty[j + 1] += x.get(k, j) * y[k];
        }
    }

    let chol = cholesky(&xtx).map_err(ModelError::RankDeficient)?;
    let beta = chol.solve_vec(&xty);

    let mut rss = 0.0;
    for k in 0..n {
        let pred =
            beta[0] + (0..p).map(|j| beta[j + 1] * x.get(k, j)).sum::<f64>();
        rss += (y[k] - pred) * (y[k] - pred);
    }
    let dof = n - p - 1;
    let residual_variance = rss / dof as f64;

    let mut std_errors = vec![0.0; aug];
    for k in 0..aug {
        let mut unit = vec![0.0; aug];
        unit[k] = 1.0;
        let col = chol.solve_vec(&unit);
        std_errors[k] = (residual_variance * col[k]).max(0.0).sqrt();
    }

    let p_value = |b: f64, se: f64| {
        if se == 0.0 {
            if b == 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            student_t_two_sided_p(b / se, dof as f64)
        }
    };
    let p_values: Vec<f64> =
        (0..aug).map(|k| p_value(beta[k], std_errors[k])).collect();

    Ok(LinearModel {
        intercept: beta[0],
        coefficients: beta[1..].to_vec(),
        intercept_std_err: std_errors[0],
        std_errors: std_errors[1..].to_vec(),
        intercept_p_value: p_values[0],
        p_values: p_values[1..].to_vec(),
        residual_variance,
        dof,
    })
}

/// Mean squared error.
pub fn mse(predictions: &[f64], targets: &[f64]) -> f64 {
    assert_eq!(predictions.len(), targets.len(), "length mismatch");
    assert!(!predictions.is_empty(), "mse of empty slices");
    per_sample_losses(predictions, targets).iter().sum::<f64>() / predictions.len() as f64
}

/// Per-observation squared errors.
pub fn per_sample_losses(predictions: &[f64], targets: &[f64]) -> Vec<f64> {
    assert_eq!(predictions.len(), targets.len(), "length mismatch");
    predictions.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).collect()
}
