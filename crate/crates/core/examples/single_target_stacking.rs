//! Stack source-subject classifiers for one target with few labeled samples.

use stackdecode::data::{stratified_split, subsample_stratified};
use stackdecode::experiments::balanced_accuracy;
use stackdecode::learners::{LearnerConfig, LinearSvcConfig, Penalty};
use stackdecode::stacking::{conventional_decode, fit_ensemble, pretrain_bases, stack_features, subject_importances, StackEncoding};
use stackdecode::synthetic::{generate_cohort, SyntheticSpec};

fn main() -> stackdecode::Result<()> {
    let cohort = generate_cohort(&SyntheticSpec::standard_benchmark())?;
    let target = "sub-001";
    let ds = cohort.subject(target).unwrap();
    let k = cohort.n_classes();

    // one base SVC per other subject, trained on all of its rows
    let bank = pretrain_bases(&cohort, target, Penalty::L2)?;
    let stacked = stack_features(&bank, ds.features(), StackEncoding::OneHotLabels)?;
    println!("{} bases, meta-features {}x{}", bank.len(), stacked.matrix().nrows(), stacked.matrix().ncols());

    let plan = stratified_split(ds, 0.1, 0)?;
    let meta_cfg = LearnerConfig::Svc(LinearSvcConfig::default());
    let y_test = ds.labels_at(&plan.test_indices);
    println!("{:>6} {:>13} {:>9}", "train", "conventional", "ensemble");
    for size in [4, 8, 16, 32, plan.train_indices.len()] {
        let rows = subsample_stratified(ds, &plan, size, 1)?;
        let conv = conventional_decode(&ds.rows(&rows), &ds.labels_at(&rows), &ds.rows(&plan.test_indices), k, &meta_cfg)?;
        let meta = fit_ensemble(&stacked.rows(&rows), &ds.labels_at(&rows), &meta_cfg)?;
        let ens = meta.predict(stacked.rows(&plan.test_indices).matrix())?;
        println!(
            "{size:>6} {:>13.3} {:>9.3}",
            balanced_accuracy(&y_test, &conv, k)?,
            balanced_accuracy(&y_test, &ens, k)?
        );
    }

    let meta = fit_ensemble(&stacked, ds.labels(), &meta_cfg)?;
    let mut imp = subject_importances(&meta, &bank)?;
    imp.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("most used sources: {:?}", &imp[..3]);
    Ok(())
}
