//! Ridge regression without intercept, solved directly.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RidgeConfig {
    pub lambda: f64,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        Self { lambda: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ridge {
    pub(crate) coef: DVector<f64>,
    /// Set when `lambda = 0` and `XᵀX` is singular; the minimum-norm solution was returned.
    pub(crate) rank_deficient: bool,
}

impl Ridge {
    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coef
    }

    pub fn rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    pub fn predict_values(&self, x: &Matrix) -> Result<DVector<f64>> {
        if x.ncols() != self.coef.len() {
            return Err(Error::ShapeMismatch {
                expected: self.coef.len(),
                found: x.ncols(),
            });
        }
        Ok(x * &self.coef)
    }
}

/// Solves `(XᵀX + λI) w = Xᵀy`.
///
/// With `λ > 0` this is a Cholesky solve, on the `n × n` dual system
/// `w = Xᵀ(XXᵀ + λI)⁻¹y` when there are fewer rows than columns. With `λ = 0` the minimum-norm least
/// squares solution is computed through the SVD of `X`, and `rank_deficient`
/// reports whether any singular value fell below the numerical rank cutoff.
pub fn fit_ridge(x: &Matrix, y: &[f64], cfg: &RidgeConfig) -> Result<Ridge> {
    if x.nrows() == 0 {
        return Err(Error::invalid("ridge needs at least one row"));
    }
    if x.nrows() != y.len() {
        return Err(Error::invalid(format!(
            "{} rows but {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if !(cfg.lambda >= 0.0 && cfg.lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {}", cfg.lambda)));
    }
    let yv = DVector::from_column_slice(y);
    if cfg.lambda > 0.0 && x.nrows() < x.ncols() {
        let mut gram = x * x.transpose();
        for i in 0..gram.nrows() {
            gram[(i, i)] += cfg.lambda;
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::invalid("regularized Gram matrix is not positive definite"))?;
        return Ok(Ridge {
            coef: x.tr_mul(&chol.solve(&yv)),
            rank_deficient: false,
        });
    }
    if cfg.lambda > 0.0 {
        let mut gram = x.tr_mul(x);
        for i in 0..gram.nrows() {
            gram[(i, i)] += cfg.lambda;
        }
        let rhs = x.tr_mul(&yv);
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::invalid("regularized Gram matrix is not positive definite"))?;
        return Ok(Ridge {
            coef: chol.solve(&rhs),
            rank_deficient: false,
        });
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = smax * f64::EPSILON * x.nrows().max(x.ncols()) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let coef = svd
        .solve(&yv, cutoff)
        .map_err(|e| Error::invalid(format!("least squares solve failed: {e}")))?;
    Ok(Ridge {
        coef,
        rank_deficient: rank < x.ncols(),
    })
}
