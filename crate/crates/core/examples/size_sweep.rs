//! Training-size sweep on a small preset, printing the gain per grid size.

use stackdecode::experiments::{run_size_sweep, ExperimentConfig};
use stackdecode::learners::Family;
use stackdecode::synthetic::{generate_cohort, Preset};

fn main() -> stackdecode::Result<()> {
    let cohort = generate_cohort(&Preset::Neuromod.spec())?;
    let mut cfg = ExperimentConfig::size_sweep().with_families(&[Family::Svc]);
    cfg.n_cv = 5;
    let report = run_size_sweep(&cohort, &cfg)?;
    println!("{} records, hash {}", report.records.len(), &report.metadata.content_hash[..16]);
    for g in report.gains.iter().filter(|g| g.train_size.is_some()) {
        println!(
            "train {:>3} ({:>2}/class): gain {:+6.2} pts [{:+.2}, {:+.2}]",
            g.train_size.unwrap(),
            g.samples_per_class.unwrap(),
            g.mean,
            g.ci_low,
            g.ci_high
        );
    }
    Ok(())
}
