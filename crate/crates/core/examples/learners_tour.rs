//! Fit each classifier family on one subject and compare held-out accuracy.

use stackdecode::data::stratified_split;
use stackdecode::experiments::balanced_accuracy;
use stackdecode::learners::{FeatureWeights, ForestConfig, LearnerConfig, LinearSvcConfig, MlpConfig, Penalty, TrainedModel};
use stackdecode::stacking::Standardizer;
use stackdecode::synthetic::{generate_cohort, SyntheticSpec};

fn main() -> stackdecode::Result<()> {
    let spec = SyntheticSpec {
        n_subjects: 1,
        n_samples_per_subject: 200,
        n_features: 32,
        ..SyntheticSpec::default()
    };
    let cohort = generate_cohort(&spec)?;
    let ds = &cohort.subjects()[0];
    let plan = stratified_split(ds, 0.25, 7)?;
    let scaler = Standardizer::fit(&ds.rows(&plan.train_indices));
    let x_train = scaler.transform(&ds.rows(&plan.train_indices));
    let x_test = scaler.transform(&ds.rows(&plan.test_indices));
    let y_train = ds.labels_at(&plan.train_indices);
    let y_test = ds.labels_at(&plan.test_indices);
    let k = cohort.n_classes();

    let configs = [
        ("svc-l2", LearnerConfig::Svc(LinearSvcConfig::default())),
        ("svc-l1", LearnerConfig::Svc(LinearSvcConfig::default().with_penalty(Penalty::L1))),
        ("mlp", LearnerConfig::Mlp(MlpConfig::default())),
        ("forest", LearnerConfig::Forest(ForestConfig::default().with_trees(200))),
    ];
    for (name, cfg) in configs {
        let model = cfg.fit(&x_train, &y_train, k)?;
        let acc = balanced_accuracy(&y_test, &model.predict(&x_test)?, k)?;
        let blob = model.to_bytes();
        let restored = TrainedModel::from_bytes(&blob)?;
        assert_eq!(restored.predict(&x_test)?, model.predict(&x_test)?);
        let weights = match model.feature_weights() {
            Ok(FeatureWeights::Linear(w)) => {
                let zeros = w.iter().filter(|v| **v == 0.0).count();
                format!("{}x{} linear, {zeros} exact zeros", w.nrows(), w.ncols())
            }
            Ok(FeatureWeights::Importance(v)) => {
                let top = v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
                format!("importances, top feature {} ({:.3})", top.0, top.1)
            }
            Err(e) => e.to_string(),
        };
        println!("{name:<7} accuracy {acc:.3}  blob {} bytes  weights: {weights}", blob.len());
    }
    Ok(())
}
