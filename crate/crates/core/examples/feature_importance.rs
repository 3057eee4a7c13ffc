//! Forest importances over input features, and over source subjects in a stacked model.

use stackdecode::learners::{FeatureWeights, ForestConfig, LearnerConfig, Penalty};
use stackdecode::stacking::{fit_ensemble, pretrain_bases, stack_features, subject_importances, Standardizer, StackEncoding};
use stackdecode::synthetic::{generate_cohort, SyntheticSpec};

fn main() -> stackdecode::Result<()> {
    let spec = SyntheticSpec {
        n_subjects: 6,
        n_features: 16,
        ..SyntheticSpec::default()
    };
    let cohort = generate_cohort(&spec)?;
    let ds = &cohort.subjects()[0];
    let forest = LearnerConfig::Forest(ForestConfig::default().with_trees(200));

    let x = Standardizer::fit(ds.features()).transform(ds.features());
    let model = forest.fit(&x, ds.labels(), cohort.n_classes())?;
    if let FeatureWeights::Importance(imp) = model.feature_weights()? {
        let mut ranked: Vec<(usize, f64)> = imp.into_iter().enumerate().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        // the class means live in the first 2K coordinates
        println!("top features: {:?}", &ranked[..6]);
    }

    let bank = pretrain_bases(&cohort, ds.id(), Penalty::L2)?;
    let stacked = stack_features(&bank, ds.features(), StackEncoding::OneHotLabels)?;
    let meta = fit_ensemble(&stacked, ds.labels(), &forest)?;
    for (id, v) in subject_importances(&meta, &bank)? {
        println!("{id}: {v:.3}");
    }
    Ok(())
}
