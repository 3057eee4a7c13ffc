use stackdecode::theory::*;

fn discrete_argmin(n: usize) -> usize {
    (1..=n)
        .min_by(|&a, &b| ensemble_error(1.0, a, n).total_cmp(&ensemble_error(1.0, b, n)))
        .unwrap()
}

#[test]
fn ensemble_error_argmin_near_sqrt_n() {
    for n in [16usize, 100, 400, 50, 1000] {
        let best = discrete_argmin(n);
        let root = (n as f64).sqrt();
        assert!((best as f64 - root).abs() <= 1.0, "n={n}: argmin {best}");
        let continuous = 2.0 / root;
        assert!(ensemble_error(1.0, best, n) >= continuous - 1e-12);
    }
}

#[test]
fn ensemble_error_convex_and_scaled() {
    for n in [16usize, 200] {
        let e: Vec<f64> = (1..=n).map(|k| ensemble_error(2.0, k, n)).collect();
        for w in e.windows(3) {
            assert!(w[0] + w[2] - 2.0 * w[1] >= -1e-12);
        }
        assert!((ensemble_error(2.0, 5, n) - 2.0 * ensemble_error(1.0, 5, n)).abs() < 1e-12);
        assert_eq!(ensemble_error(0.0, 7, n), 0.0);
    }
}

#[test]
fn bias_and_dimension_monotone_in_lambda() {
    let s = RidgeSpectrum::new(vec![5.0, 2.0, 1.0, 0.1], vec![1.0, 0.5, 0.0, 2.0], 1.0, 100, 4).unwrap();
    let lambdas: Vec<f64> = (0..60).map(|i| 10f64.powf(-3.0 + i as f64 * 0.1)).collect();
    for w in lambdas.windows(2) {
        assert!(effective_dimension(&s, w[1]) <= effective_dimension(&s, w[0]));
        assert!(squared_bias(&s, w[1]).unwrap() >= squared_bias(&s, w[0]).unwrap());
    }
    assert!(squared_bias(&s, 0.0).is_err());
    assert!(RidgeSpectrum::new(vec![1.0], vec![1.0, 2.0], 1.0, 10, 1).is_err());
}

#[test]
fn ridge_error_minimum_on_single_direction() {
    // one direction with eigenvalue 1 and response 1: error = (λ/(1+λ))² + var/(n(1+λ)²),
    // minimized at λ = var / n
    let n = 50;
    let s = RidgeSpectrum::new(vec![1.0], vec![1.0], 2.0, n, 1).unwrap();
    let grid: Vec<f64> = (0..4000).map(|i| 10f64.powf(-4.0 + i as f64 * 0.001)).collect();
    let best = grid
        .iter()
        .copied()
        .min_by(|a, b| ridge_error(&s, *a).unwrap().total_cmp(&ridge_error(&s, *b).unwrap()))
        .unwrap();
    assert!((best - 2.0 / n as f64).abs() / (2.0 / n as f64) < 0.01, "{best}");
}

#[test]
fn regime_examples() {
    assert_eq!(classify_regime(1, 100, 50.0), Regime::SmallN);
    assert_eq!(classify_regime(1, 5000, 50.0), Regime::SmallN);
    assert_eq!(classify_regime(10, 100, 50.0), Regime::Balanced);
    assert_eq!(classify_regime(100, 100, 50.0), Regime::LargeN);
    assert_eq!(Regime::SmallN.to_string(), "small-N");
}

#[test]
fn monte_carlo_two_bases_low_noise_worse_than_conventional() {
    let r = monte_carlo_ensemble_error(&MonteCarloConfig {
        n_bases: 2,
        noise: 0.1,
        ..MonteCarloConfig::default()
    })
    .unwrap();
    println!("N=2: conventional {:.3}, ensemble {:.3}", r.conventional_error, r.ensemble_error);
    assert!(r.ensemble_error >= r.conventional_error);
}

#[test]
fn monte_carlo_balanced_beats_conventional_when_target_rows_below_dimension() {
    let cfg = MonteCarloConfig::default();
    assert!(cfg.n_samples < cfg.n_features);
    let r = monte_carlo_ensemble_error(&cfg).unwrap();
    println!("N=14: conventional {:.3}, ensemble {:.3}", r.conventional_error, r.ensemble_error);
    assert!(r.ensemble_error < r.conventional_error);
    assert_eq!(r.singular_trials, 0);
    assert_eq!(r, monte_carlo_ensemble_error(&cfg).unwrap());
}

#[test]
fn monte_carlo_reports_singular_designs() {
    let r = monte_carlo_ensemble_error(&MonteCarloConfig {
        n_bases: 14,
        n_target_train: Some(10),
        n_trials: 50,
        ..MonteCarloConfig::default()
    })
    .unwrap();
    assert_eq!(r.singular_trials, 50);
    assert!(monte_carlo_ensemble_error(&MonteCarloConfig {
        n_trials: 49,
        ..MonteCarloConfig::default()
    })
    .is_err());
}
