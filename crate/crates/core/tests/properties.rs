use proptest::prelude::*;

use stackdecode::data::{decode_features, encode_features, stratified_split, subsample_stratified, Matrix, SubjectDataset};
use stackdecode::experiments::balanced_accuracy;
use stackdecode::theory::ensemble_error;

proptest! {
    #[test]
    fn balanced_accuracy_in_unit_interval(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..60)) {
        let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let v = balanced_accuracy(&t, &p, 5).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(balanced_accuracy(&t, &t, 5).unwrap(), 1.0);
    }

    #[test]
    fn split_and_subsample_never_touch_test_rows(
        per_class in prop::collection::vec(2usize..15, 2..5),
        fraction in 0.05f64..0.5,
        seed in any::<u64>(),
        take in 0.0f64..=1.0,
    ) {
        let labels: Vec<usize> = per_class.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        let n = labels.len();
        let ds = SubjectDataset::new("s", Matrix::zeros(n, 1), labels, per_class.len()).unwrap();
        let plan = stratified_split(&ds, fraction, seed).unwrap();
        prop_assert!(plan.is_disjoint_from_test(&plan.train_indices));
        prop_assert_eq!(plan.train_indices.len() + plan.test_indices.len(), n);
        let size = ((plan.train_indices.len() as f64) * take).round() as usize;
        let sub = subsample_stratified(&ds, &plan, size, seed).unwrap();
        prop_assert_eq!(sub.len(), size);
        prop_assert!(plan.is_disjoint_from_test(&sub));
    }

    #[test]
    fn feature_codec_round_trips_f32(rows in 1usize..6, cols in 1usize..6, vals in prop::collection::vec(-1e6f32..1e6, 36)) {
        let m = Matrix::from_fn(rows, cols, |r, c| vals[r * cols + c] as f64);
        prop_assert_eq!(decode_features(&encode_features(&m)).unwrap(), m);
    }

    #[test]
    fn ensemble_error_bounded_below(n in 1usize..5000, k in 1usize..500, var in 0.0f64..10.0) {
        let e = ensemble_error(var, k, n);
        prop_assert!(e >= 2.0 * var / (n as f64).sqrt() - 1e-9);
    }
}
