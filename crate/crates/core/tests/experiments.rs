mod common;

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use stackdecode::data::Cohort;
use stackdecode::experiments::*;
use stackdecode::learners::Family;
use stackdecode::stacking::BankCache;
use stackdecode::synthetic::{generate_cohort, table1_preset, SyntheticSpec};

fn toy() -> Cohort {
    generate_cohort(&SyntheticSpec {
        n_subjects: 5,
        n_samples_per_subject: 40,
        n_features: 16,
        n_classes: 4,
        seed: 2,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn small_size_sweep() -> ExperimentConfig {
    ExperimentConfig {
        n_cv: 3,
        grid_points: 4,
        bootstrap_iterations: 200,
        ..ExperimentConfig::size_sweep().with_families(&[Family::Svc])
    }
}

#[test]
fn balanced_accuracy_matches_hand_computed_cases() {
    let cases = common::balanced_accuracy_cases();
    assert!(cases.len() >= 10);
    for (t, p, k, expected) in cases {
        assert_eq!(balanced_accuracy(&t, &p, k).unwrap(), expected, "{t:?} {p:?}");
    }
}

#[test]
fn bootstrap_coverage_of_known_mean() {
    let normal = Normal::new(3.0, 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let reps = 200;
    let covered = (0..reps)
        .filter(|&r| {
            let sample: Vec<f64> = (0..40).map(|_| normal.sample(&mut rng)).collect();
            let (lo, hi) = bootstrap_ci(&sample, 1000, 0.95, r).unwrap();
            lo <= 3.0 && 3.0 <= hi
        })
        .count();
    let coverage = covered as f64 / reps as f64;
    println!("coverage {coverage:.3}");
    assert!((0.90..=0.99).contains(&coverage));
}

#[test]
fn neuromod_record_count_and_structure() {
    let cohort = generate_cohort(&table1_preset("neuromod").unwrap()).unwrap();
    let cfg = ExperimentConfig {
        n_cv: 2,
        bootstrap_iterations: 100,
        ..ExperimentConfig::size_sweep().with_families(&[Family::Svc, Family::Forest])
    };
    let report = run_size_sweep(&cohort, &cfg).unwrap();
    let grid_len = report.metadata.splits[0].grid.len();
    assert_eq!(grid_len, 10);
    assert_eq!(report.records.len(), 4 * 2 * grid_len * 2 * 2);
    for s in &report.metadata.splits {
        assert_eq!((s.n_train, s.n_test), (45, 5));
        assert_eq!(s.n_bases, 3);
        assert!(s.bases_on_full_source_data);
    }
    assert!(report.records.iter().all(|r| r.leakage_free && r.n_test == 5));
    assert!(report.records.iter().all(|r| r.balanced_accuracy.is_some()));
}

#[test]
fn gain_antisymmetry_and_pairing() {
    let report = run_size_sweep(&toy(), &small_size_sweep()).unwrap();
    let sel = CellSelector::family(Family::Svc);
    let g = gain(&report, &sel).unwrap();
    let back = gain_between(&report, &sel, Approach::Conventional, Approach::Ensemble).unwrap();
    assert!((g + back).abs() < 1e-9);
    let paired = paired_gains(&report, &sel);
    assert_eq!(paired.len(), report.records.len() / 2);
    let mean = paired.iter().sum::<f64>() / paired.len() as f64;
    assert!((mean - g).abs() < 1e-9);
    let (m, lo, hi) = gain_ci(&report, &sel, 500, 1).unwrap();
    assert!(lo <= m && m <= hi);
}

#[test]
fn subject_sweep_draws_distinct_subsets() {
    let cohort = toy();
    let cfg = ExperimentConfig {
        grid_points: 3,
        bootstrap_iterations: 100,
        ..ExperimentConfig::subject_sweep(vec![1, 2, 3]).with_families(&[Family::Svc])
    };
    let report = run_subject_sweep(&cohort, &cfg).unwrap();
    for target in cohort.subject_ids() {
        for m in [1usize, 2, 3] {
            let subsets: Vec<&SubsetInfo> = report
                .metadata
                .subsets
                .iter()
                .filter(|s| s.target == target && s.ensemble_size == m)
                .collect();
            assert_eq!(subsets.len(), 5);
            let distinct: BTreeSet<&Vec<String>> = subsets.iter().map(|s| &s.subjects).collect();
            // C(4, m) distinct subsets exist for 4 sources
            let available = [4, 6, 4][m - 1];
            assert_eq!(distinct.len(), available.min(5));
            assert!(subsets.iter().all(|s| s.subjects.len() == m && !s.subjects.iter().any(|id| id == target)));
        }
    }
    assert!(report.records.iter().all(|r| r.leakage_free));
}

#[test]
fn deterministic_across_worker_counts_and_cache() {
    let cohort = toy();
    let cfg = small_size_sweep();
    let run_with = |threads: usize, cache: Option<&std::path::Path>| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut exp = Experiment::new(&cohort, cfg.clone());
            if let Some(dir) = cache {
                exp = exp.with_cache(BankCache::new(dir));
            }
            exp.run_size_sweep().unwrap()
        })
    };
    let one = run_with(1, None);
    let three = run_with(3, None);
    assert_eq!(one.metadata.content_hash, three.metadata.content_hash);
    assert_eq!(one.metadata.content_hash, one.compute_content_hash());

    let dir = tempfile::tempdir().unwrap();
    let cold = run_with(2, Some(dir.path()));
    let warm = run_with(2, Some(dir.path()));
    assert_eq!((cold.run_info.bank_cache_hits, cold.run_info.bank_cache_misses), (0, 5));
    assert_eq!((warm.run_info.bank_cache_hits, warm.run_info.bank_cache_misses), (5, 0));
    assert_eq!(cold.metadata.content_hash, one.metadata.content_hash);
    assert_eq!(warm.metadata.content_hash, one.metadata.content_hash);

    let other = run_size_sweep(&cohort, &cfg.clone().with_seed(1)).unwrap();
    assert_ne!(other.metadata.content_hash, one.metadata.content_hash);
}

#[test]
fn json_round_trip_and_config_errors() {
    let report = run_size_sweep(&toy(), &small_size_sweep()).unwrap();
    let back = ExperimentReport::from_json(&report.to_json()).unwrap();
    assert_eq!(back.compute_content_hash(), report.metadata.content_hash);
    assert_eq!(report.records_csv().lines().count(), report.records.len() + 1);

    let bad = ExperimentConfig {
        n_cv: 0,
        ..ExperimentConfig::size_sweep()
    };
    assert!(bad.validate().is_err());
    let unknown_target = ExperimentConfig {
        targets: Some(vec!["sub-999".into()]),
        ..small_size_sweep()
    };
    assert!(run_size_sweep(&toy(), &unknown_target).is_err());
}
