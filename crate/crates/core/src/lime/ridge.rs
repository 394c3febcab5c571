//! Weighted ridge regression with an unpenalised intercept.

use nalgebra::{DMatrix, DVector};

use super::LimeError;

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub coef: Vec<f64>,
    pub intercept: f64,
}

impl RidgeFit {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(row).map(|(c, x)| c * x).sum::<f64>()
    }
}

/// Minimises `Σ w̃_i (y_i − a − x_i·β)² + ridge·|β|²` where `w̃` are the weights
/// rescaled to mean 1, so the fit does not depend on the overall scale of `weights`.
///
/// `rows` is row-major with `n_cols` columns. Columns are centred on their weighted
/// means, which leaves the intercept unpenalised.
pub fn weighted_ridge(
    rows: &[f64],
    n_cols: usize,
    y: &[f64],
    weights: &[f64],
    ridge: f64,
) -> Result<RidgeFit, LimeError> {
    let n = y.len();
    debug_assert_eq!(rows.len(), n * n_cols);
    let total: f64 = weights.iter().sum();
    let w: Vec<f64> = weights.iter().map(|v| v * n as f64 / total).collect();
    let w_sum = n as f64;
    let y_mean = if y.iter().all(|v| *v == y[0]) {
        y[0]
    } else {
        y.iter().zip(&w).map(|(y, w)| y * w).sum::<f64>() / w_sum
    };
    let x_mean: Vec<f64> = (0..n_cols)
        .map(|j| (0..n).map(|i| w[i] * rows[i * n_cols + j]).sum::<f64>() / w_sum)
        .collect();
    if n_cols == 0 {
        return Ok(RidgeFit {
            coef: vec![],
            intercept: y_mean,
        });
    }

    let mut gram = DMatrix::<f64>::zeros(n_cols, n_cols);
    let mut rhs = DVector::<f64>::zeros(n_cols);
    let mut centred = vec![0.0; n_cols];
    for i in 0..n {
        for j in 0..n_cols {
            centred[j] = rows[i * n_cols + j] - x_mean[j];
        }
        let yc = y[i] - y_mean;
        for a in 0..n_cols {
            let wa = w[i] * centred[a];
            rhs[a] += wa * yc;
            for b in a..n_cols {
                gram[(a, b)] += wa * centred[b];
            }
        }
    }
    for a in 0..n_cols {
        gram[(a, a)] += ridge;
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    let chol = gram.cholesky().ok_or(LimeError::SingularSystem)?;
    let beta = chol.solve(&rhs);
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(LimeError::SingularSystem);
    }
    let coef: Vec<f64> = beta.iter().copied().collect();
    let intercept = y_mean - coef.iter().zip(&x_mean).map(|(c, m)| c * m).sum::<f64>();
    Ok(RidgeFit { coef, intercept })
}
