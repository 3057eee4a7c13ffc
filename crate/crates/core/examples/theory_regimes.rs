//! Predicted and simulated ensemble error over ensemble sizes.

use stackdecode::theory::{
    classify_regime, effective_dimension, ensemble_error, monte_carlo_ensemble_error, ridge_error, MonteCarloConfig,
    RidgeSpectrum,
};

fn main() -> stackdecode::Result<()> {
    let spectrum = RidgeSpectrum::new(vec![4.0, 2.0, 1.0, 0.5, 0.25], vec![1.0, 0.5, 0.5, 0.2, 0.1], 1.0, 100, 1)?;
    for lambda in [0.01, 0.1, 1.0, 10.0] {
        println!(
            "lambda {lambda:>5}: d = {:.3}, ridge error = {:.4}",
            effective_dimension(&spectrum, lambda),
            ridge_error(&spectrum, lambda)?
        );
    }

    let n_samples = 200;
    println!("\n{:>4} {:>10} {:>10} {:>12} {:>10}", "N", "predicted", "regime", "conventional", "ensemble");
    for n in [1, 3, 7, 14, 50, 200] {
        let mc = monte_carlo_ensemble_error(&MonteCarloConfig {
            n_bases: n,
            n_samples,
            n_trials: 50,
            ..MonteCarloConfig::default()
        })?;
        println!(
            "{n:>4} {:>10.4} {:>10} {:>12.4} {:>10.4}",
            ensemble_error(1.0, n, n_samples),
            classify_regime(n, n_samples, f64::INFINITY).to_string(),
            mc.conventional_error,
            mc.ensemble_error
        );
    }
    Ok(())
}
