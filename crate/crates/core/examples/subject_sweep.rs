//! Gain as a function of how many source subjects enter the ensemble.

use stackdecode::experiments::{run_subject_sweep, ExperimentConfig};
use stackdecode::learners::Family;
use stackdecode::synthetic::{generate_cohort, SyntheticSpec};

fn main() -> stackdecode::Result<()> {
    let cohort = generate_cohort(&SyntheticSpec::standard_benchmark())?;
    let mut cfg = ExperimentConfig::subject_sweep(vec![1, 2, 4, 8, 13]).with_families(&[Family::Svc]);
    cfg.targets = Some(vec!["sub-001".into(), "sub-002".into(), "sub-003".into()]);
    let report = run_subject_sweep(&cohort, &cfg)?;
    for g in report.gains.iter().filter(|g| g.train_size.is_none()) {
        println!("{:>2} subjects: gain {:+6.2} pts [{:+.2}, {:+.2}]", g.n_subjects_in_ensemble, g.mean, g.ci_low, g.ci_high);
    }
    for s in report.metadata.subsets.iter().filter(|s| s.target == "sub-001" && s.ensemble_size == 2) {
        println!("split {}: {:?}", s.split, s.subjects);
    }
    Ok(())
}
