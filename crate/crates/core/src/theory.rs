//! Bias-variance model of ridge decoders and of a stacked least-squares
//! ensemble, with a Monte-Carlo check on linear-Gaussian regression tasks.
//!
//! All proportionality constants are 1.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::learners::{fit_ridge, RidgeConfig};
use crate::seed::derive;
use crate::synthetic::InterpolatedRotation;

/// Covariance spectrum and per-direction response of one subject's task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeSpectrum {
    pub eigenvalues: Vec<f64>,
    pub response_magnitudes: Vec<f64>,
    pub var_y: f64,
    pub n_samples: usize,
    pub n_subjects: usize,
}

impl RidgeSpectrum {
    pub fn new(eigenvalues: Vec<f64>, response_magnitudes: Vec<f64>, var_y: f64, n_samples: usize, n_subjects: usize) -> Result<Self> {
        if eigenvalues.len() != response_magnitudes.len() {
            return Err(Error::ShapeMismatch {
                expected: eigenvalues.len(),
                found: response_magnitudes.len(),
            });
        }
        if eigenvalues.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(Error::invalid("eigenvalues must be finite and nonnegative"));
        }
        if !(var_y > 0.0) || n_samples == 0 {
            return Err(Error::invalid("var_y must be positive and n_samples at least 1"));
        }
        Ok(Self {
            eigenvalues,
            response_magnitudes,
            var_y,
            n_samples,
            n_subjects,
        })
    }
}

/// `Σ_j λ_j / (1 + λ_j/λ)² · f_j²`.
pub fn squared_bias(s: &RidgeSpectrum, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("ridge penalty must be positive, got {lambda}")));
    }
    Ok(s.eigenvalues
        .iter()
        .zip(&s.response_magnitudes)
        .map(|(&l, &f)| l / (1.0 + l / lambda).powi(2) * f * f)
        .sum())
}

/// `d(λ) = Σ_j (λ_j / (λ_j + λ))²`; zero eigenvalues contribute nothing.
pub fn effective_dimension(s: &RidgeSpectrum, lambda: f64) -> f64 {
    s.eigenvalues
        .iter()
        .filter(|&&l| l > 0.0)
        .map(|&l| (l / (l + lambda)).powi(2))
        .sum()
}

/// Squared bias plus `var_y · d(λ) / n_samples`.
pub fn ridge_error(s: &RidgeSpectrum, lambda: f64) -> Result<f64> {
    Ok(squared_bias(s, lambda)? + s.var_y * effective_dimension(s, lambda) / s.n_samples as f64)
}

/// `var_y / N + var_y · N / n_samples`.
pub fn ensemble_error(var_y: f64, n_subjects: usize, n_samples: usize) -> f64 {
    var_y / n_subjects as f64 + var_y * n_subjects as f64 / n_samples as f64
}

/// Ensemble-size regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    SmallN,
    Balanced,
    LargeN,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::SmallN => "small-N",
            Regime::Balanced => "balanced",
            Regime::LargeN => "large-N",
        })
    }
}

/// Regime boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeCuts {
    /// Largest ensemble still counted as small.
    pub small_cut: usize,
    /// Ensembles within this factor of `n_samples` count as large.
    pub rho: f64,
}

impl Default for RegimeCuts {
    fn default() -> Self {
        Self { small_cut: 3, rho: 4.0 }
    }
}

pub fn classify_regime(n_subjects: usize, n_samples: usize, d_lambda: f64) -> Regime {
    classify_regime_with(n_subjects, n_samples, d_lambda, RegimeCuts::default())
}

pub fn classify_regime_with(n_subjects: usize, n_samples: usize, d_lambda: f64, cuts: RegimeCuts) -> Regime {
    let n = n_subjects as f64;
    if n_subjects <= cuts.small_cut {
        Regime::SmallN
    } else if n < (n_samples as f64 / cuts.rho).min(d_lambda) {
        Regime::Balanced
    } else {
        Regime::LargeN
    }
}

/// Monte-Carlo regression tasks.
///
/// Every subject shares a unit signal direction `β`, seen through its own
/// rotation `R_i` at `shift` acting on the first `mixing_dim` coordinates. Base ridges are fit on `n_source_samples` rows
/// of each of the `n_bases` source subjects. The target fits a conventional
/// ridge and an unregularized least-squares combination of the base
/// predictions on the same `n_target_train` rows (default `n_samples`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub n_bases: usize,
    pub n_samples: usize,
    pub n_features: usize,
    pub noise: f64,
    pub shift: f64,
    pub mixing_dim: usize,
    pub n_source_samples: usize,
    pub n_target_train: Option<usize>,
    pub n_test: usize,
    pub ridge_lambda: f64,
    pub n_trials: usize,
    pub seed: u64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            n_bases: 14,
            n_samples: 200,
            n_features: 400,
            noise: 0.5,
            shift: 0.3,
            mixing_dim: 16,
            n_source_samples: 100,
            n_target_train: None,
            n_test: 200,
            ridge_lambda: 1.0,
            n_trials: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub conventional_error: f64,
    pub ensemble_error: f64,
    /// Trials whose stacked design was rank deficient; they used the minimum-norm solution.
    pub singular_trials: usize,
    pub n_trials: usize,
}

struct Task {
    x: Matrix,
    y: Vec<f64>,
}

fn draw_task(beta: &DVector<f64>, rows: usize, noise: f64, rng: &mut ChaCha8Rng) -> Task {
    let p = beta.len();
    let x = Matrix::from_fn(rows, p, |_, _| rng.sample(StandardNormal));
    let y = (0..rows)
        .map(|r| x.row(r).transpose().dot(beta) + noise * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Task { x, y }
}

fn mse(pred: &DVector<f64>, truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / truth.len() as f64
}

fn trial(cfg: &MonteCarloConfig, seed: u64) -> Result<(f64, f64, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = cfg.n_features;
    let beta = DVector::from_fn(p, |r, _| if r == 0 { 1.0 } else { 0.0 });
    let m = cfg.mixing_dim.clamp(1, p);
    let mut subject_beta = || {
        let rot = InterpolatedRotation::sample(m, cfg.shift, &mut rng);
        let mut b = beta.clone();
        b.rows_mut(0, m).copy_from(&rot.apply(&beta.rows(0, m).into_owned()));
        b
    };
    let target_beta = subject_beta();
    let source_betas: Vec<DVector<f64>> = (0..cfg.n_bases).map(|_| subject_beta()).collect();
    let ridge = RidgeConfig {
        lambda: cfg.ridge_lambda,
    };
    let bases = source_betas
        .iter()
        .map(|b| {
            let t = draw_task(b, cfg.n_source_samples, cfg.noise, &mut rng);
            fit_ridge(&t.x, &t.y, &ridge)
        })
        .collect::<Result<Vec<_>>>()?;
    let n_train = cfg.n_target_train.unwrap_or(cfg.n_samples);
    let train = draw_task(&target_beta, n_train, cfg.noise, &mut rng);
    let test = draw_task(&target_beta, cfg.n_test, cfg.noise, &mut rng);

    let conv = fit_ridge(&train.x, &train.y, &ridge)?;
    let conv_err = mse(&conv.predict_values(&test.x)?, &test.y);

    let stack = |x: &Matrix| -> Result<Matrix> {
        let mut z = Matrix::zeros(x.nrows(), bases.len());
        for (j, b) in bases.iter().enumerate() {
            z.set_column(j, &b.predict_values(x)?);
        }
        Ok(z)
    };
    let meta = fit_ridge(&stack(&train.x)?, &train.y, &RidgeConfig { lambda: 0.0 })?;
    let ens_err = mse(&meta.predict_values(&stack(&test.x)?)?, &test.y);
    Ok((conv_err, ens_err, meta.rank_deficient()))
}

/// Mean test squared error of the conventional ridge and of the stacked ensemble.
pub fn monte_carlo_ensemble_error(cfg: &MonteCarloConfig) -> Result<MonteCarloResult> {
    if cfg.n_trials < 50 {
        return Err(Error::invalid("Monte-Carlo needs at least 50 trials"));
    }
    if cfg.n_bases == 0 || cfg.n_samples == 0 || cfg.n_features == 0 || cfg.n_source_samples == 0 || cfg.n_test == 0 {
        return Err(Error::invalid("Monte-Carlo sizes must be positive"));
    }
    if cfg.n_target_train == Some(0) {
        return Err(Error::invalid("n_target_train must be positive"));
    }
    if !(0.0..=1.0).contains(&cfg.shift) || !(cfg.noise >= 0.0) || !(cfg.ridge_lambda > 0.0) {
        return Err(Error::invalid("shift must lie in [0, 1], noise be nonnegative and ridge_lambda positive"));
    }
    let outcomes = (0..cfg.n_trials)
        .into_par_iter()
        .map(|t| trial(cfg, derive(cfg.seed, &[t as u64])))
        .collect::<Result<Vec<_>>>()?;
    let n = outcomes.len() as f64;
    let singular = outcomes.iter().filter(|o| o.2).count();
    if singular > 0 {
        log::warn!(
            "stacked design rank deficient in {singular}/{} trials ({} bases, {} target rows); minimum-norm fit used",
            cfg.n_trials,
            cfg.n_bases,
            cfg.n_target_train.unwrap_or(cfg.n_samples)
        );
    }
    Ok(MonteCarloResult {
        conventional_error: outcomes.iter().map(|o| o.0).sum::<f64>() / n,
        ensemble_error: outcomes.iter().map(|o| o.1).sum::<f64>() / n,
        singular_trials: singular,
        n_trials: cfg.n_trials,
    })
}
