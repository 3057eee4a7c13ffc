//! One-vs-rest linear SVC with squared hinge loss.
//!
//! Each binary problem minimizes
//!
//! ```text
//! P(w, b) + C · Σ_i max(0, 1 − y_i (w·x_i + b))²
//! ```
//!
//! with `P = ½(‖w‖² + b²)` (l2) or `P = ‖w‖₁ + |b|` (l1). The intercept is a
//! constant feature and is penalized like any other weight. The solver is
//! primal coordinate descent: each coordinate takes a Newton step built from
//! the generalized second derivative of the loss (soft-thresholded for l1),
//! followed by an Armijo backtracking line search on the exact objective.

use serde::{Deserialize, Serialize};

use super::{check_training_labels, Penalty};
use crate::data::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearSvcConfig {
    pub penalty: Penalty,
    /// Inverse regularization strength.
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LinearSvcConfig {
    fn default() -> Self {
        Self {
            penalty: Penalty::L2,
            c: 1.0,
            tol: 1e-4,
            max_iter: 1000,
        }
    }
}

impl LinearSvcConfig {
    pub fn with_penalty(mut self, penalty: Penalty) -> Self {
        self.penalty = penalty;
        self
    }

    pub fn with_c(mut self, c: f64) -> Self {
        self.c = c;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::invalid(format!("C must be positive, got {}", self.c)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Fitted one-vs-rest linear classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvc {
    /// K × p, row k scores class k against the rest.
    pub(crate) weights: Matrix,
    pub(crate) intercepts: Vec<f64>,
    /// Objective after each outer sweep, per binary problem.
    pub(crate) objective_history: Vec<Vec<f64>>,
}

impl LinearSvc {
    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    /// Objective values recorded after every coordinate sweep (empty for decoded models).
    pub fn objective_history(&self) -> &[Vec<f64>] {
        &self.objective_history
    }

    pub(crate) fn scores(&self, x: &Matrix) -> Matrix {
        let mut s = x * self.weights.transpose();
        for (k, b) in self.intercepts.iter().enumerate() {
            s.column_mut(k).add_scalar_mut(*b);
        }
        s
    }
}

/// Squared-hinge objective of one binary problem; `signs` are ±1.
pub fn binary_objective(
    x: &Matrix,
    signs: &[f64],
    w: &[f64],
    b: f64,
    c: f64,
    penalty: Penalty,
) -> f64 {
    let reg = match penalty {
        Penalty::L2 => 0.5 * (w.iter().map(|v| v * v).sum::<f64>() + b * b),
        Penalty::L1 => w.iter().map(|v| v.abs()).sum::<f64>() + b.abs(),
    };
    let loss: f64 = (0..x.nrows())
        .map(|i| {
            let m = signs[i] * (x.row(i).iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b);
            let h = (1.0 - m).max(0.0);
            h * h
        })
        .sum();
    reg + c * loss
}

pub(crate) struct BinarySolution {
    pub w: Vec<f64>,
    pub b: f64,
    pub history: Vec<f64>,
}

/// Coordinate descent on one binary squared-hinge problem.
pub(crate) fn solve_binary(x: &Matrix, signs: &[f64], cfg: &LinearSvcConfig) -> Result<BinarySolution> {
    const SIGMA: f64 = 0.01;
    const MAX_BACKTRACK: usize = 40;

    let n = x.nrows();
    let p = x.ncols();
    let data = x.as_slice();
    let ones = vec![1.0; n];
    let column = |j: usize| -> &[f64] {
        if j < p {
            &data[j * n..(j + 1) * n]
        } else {
            &ones
        }
    };
    let c = cfg.c;
    let penalty_of = |v: f64| match cfg.penalty {
        Penalty::L2 => 0.5 * v * v,
        Penalty::L1 => v.abs(),
    };

    // coefficient vector includes the intercept as its last entry
    let mut coef = vec![0.0; p + 1];
    let mut slack = vec![1.0; n];
    let objective = |coef: &[f64], slack: &[f64]| -> f64 {
        coef.iter().map(|&v| penalty_of(v)).sum::<f64>()
            + c * slack.iter().map(|s| s.max(0.0).powi(2)).sum::<f64>()
    };
    let mut history = vec![objective(&coef, &slack)];

    for iter in 0..cfg.max_iter {
        let mut max_step = 0.0f64;
        for j in 0..=p {
            let v = column(j);
            let (mut g, mut h) = (0.0, 0.0);
            for i in 0..n {
                if slack[i] > 0.0 {
                    g -= signs[i] * v[i] * slack[i];
                    h += v[i] * v[i];
                }
            }
            g *= 2.0 * c;
            h = (2.0 * c * h).max(1e-12);
            let wj = coef[j];
            let (d, delta) = match cfg.penalty {
                Penalty::L2 => {
                    let d = -(wj + g) / (1.0 + h);
                    (d, (wj + g) * d)
                }
                Penalty::L1 => {
                    let z = wj - g / h;
                    let target = z.signum() * (z.abs() - 1.0 / h).max(0.0);
                    let d = target - wj;
                    (d, g * d + (wj + d).abs() - wj.abs())
                }
            };
            if d.abs() < 1e-15 {
                continue;
            }
            max_step = max_step.max(d.abs());

            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..MAX_BACKTRACK {
                let mut change = penalty_of(wj + step * d) - penalty_of(wj);
                for i in 0..n {
                    let s_new = slack[i] - step * d * signs[i] * v[i];
                    change += c * (s_new.max(0.0).powi(2) - slack[i].max(0.0).powi(2));
                }
                if change <= SIGMA * step * delta {
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                continue;
            }
            let move_ = step * d;
            coef[j] += move_;
            for i in 0..n {
                slack[i] -= move_ * signs[i] * v[i];
            }
        }
        let f = objective(&coef, &slack);
        if !f.is_finite() {
            return Err(Error::Diverged {
                what: "objective",
                iteration: iter,
            });
        }
        history.push(f);
        if max_step <= cfg.tol {
            break;
        }
    }
    let b = coef.pop().unwrap();
    Ok(BinarySolution {
        w: coef,
        b,
        history,
    })
}

/// Fits one binary problem per class (class k against the rest).
pub fn fit_linear_svc(x: &Matrix, y: &[usize], n_classes: usize, cfg: &LinearSvcConfig) -> Result<LinearSvc> {
    cfg.validate()?;
    check_training_labels(x, y, n_classes)?;
    let mut weights = Matrix::zeros(n_classes, x.ncols());
    let mut intercepts = vec![0.0; n_classes];
    let mut objective_history = Vec::with_capacity(n_classes);
    for k in 0..n_classes {
        let signs: Vec<f64> = y.iter().map(|&l| if l == k { 1.0 } else { -1.0 }).collect();
        let sol = solve_binary(x, &signs, cfg)?;
        for (j, v) in sol.w.iter().enumerate() {
            weights[(k, j)] = *v;
        }
        intercepts[k] = sol.b;
        objective_history.push(sol.history);
    }
    Ok(LinearSvc {
        weights,
        intercepts,
        objective_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_pair() {
        let x = Matrix::from_row_slice(2, 1, &[-1.0, 1.0]);
        let m = fit_linear_svc(&x, &[0, 1], 2, &LinearSvcConfig::default()).unwrap();
        assert!(m.weights[(1, 0)] > 0.0);
        let s = m.scores(&x);
        assert!(s[(0, 0)] > s[(0, 1)]);
        assert!(s[(1, 1)] > s[(1, 0)]);
    }

    #[test]
    fn objective_monotone() {
        let x = Matrix::from_fn(30, 5, |r, c| ((r * 7 + c * 13) % 11) as f64 / 5.0 - 1.0);
        let y: Vec<usize> = (0..30).map(|r| r % 3).collect();
        for penalty in [Penalty::L1, Penalty::L2] {
            let cfg = LinearSvcConfig::default().with_penalty(penalty);
            let m = fit_linear_svc(&x, &y, 3, &cfg).unwrap();
            for h in &m.objective_history {
                assert!(h.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{h:?}");
            }
        }
    }

    #[test]
    fn l2_stationarity() {
        // gradient of ½‖w‖² + C Σ h² vanishes at the solution
        let x = Matrix::from_fn(25, 3, |r, c| ((r * 5 + c * 3) % 7) as f64 - 3.0);
        let signs: Vec<f64> = (0..25).map(|r| if r % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let cfg = LinearSvcConfig {
            tol: 1e-10,
            ..LinearSvcConfig::default()
        };
        let sol = solve_binary(&x, &signs, &cfg).unwrap();
        let mut grad: Vec<f64> = sol.w.iter().copied().chain([sol.b]).collect();
        for i in 0..25 {
            let m = signs[i] * (x.row(i).iter().zip(&sol.w).map(|(a, b)| a * b).sum::<f64>() + sol.b);
            let h = (1.0 - m).max(0.0);
            for j in 0..3 {
                grad[j] -= 2.0 * h * signs[i] * x[(i, j)];
            }
            grad[3] -= 2.0 * h * signs[i];
        }
        assert!(grad.iter().all(|g| g.abs() < 1e-6), "{grad:?}");
    }

    #[test]
    fn rejects_bad_c() {
        let x = Matrix::from_row_slice(2, 1, &[-1.0, 1.0]);
        let cfg = LinearSvcConfig::default().with_c(0.0);
        assert!(fit_linear_svc(&x, &[0, 1], 2, &cfg).is_err());
    }
}
