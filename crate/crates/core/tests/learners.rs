mod common;

use common::*;
use nalgebra::DVector;
use stackdecode::data::Matrix;
use stackdecode::learners::*;

fn svc(x: &Matrix, y: &[usize], k: usize, cfg: LinearSvcConfig) -> TrainedModel {
    TrainedModel::LinearSvc(fit_linear_svc(x, y, k, &cfg).unwrap())
}

#[test]
fn svc_matches_grid_search_oracle_on_separable_blobs() {
    let (x, y) = separable_blobs();
    let signs: Vec<f64> = y.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
    let (w, b) = grid_search_svc_2d(&x, &signs, 1.0);
    let oracle: Vec<usize> = (0..20)
        .map(|i| usize::from(w[0] * x[(i, 0)] + w[1] * x[(i, 1)] + b > 0.0))
        .collect();
    let model = svc(&x, &y, 2, LinearSvcConfig::default());
    assert_eq!(model.predict(&x).unwrap(), oracle);
    assert_eq!(oracle, y);

    // the solver's objective is no worse than the best grid point
    let fitted = fit_linear_svc(&x, &y, 2, &LinearSvcConfig::default()).unwrap();
    let ours = sq_hinge_l2(&x, &signs, &[fitted.weights()[(1, 0)], fitted.weights()[(1, 1)]], fitted.intercepts()[1], 1.0);
    assert!(ours <= sq_hinge_l2(&x, &signs, &w, b, 1.0) + 1e-9);
}

#[test]
fn svc_symmetric_pair() {
    let x = Matrix::from_row_slice(2, 1, &[-1.0, 1.0]);
    let m = fit_linear_svc(&x, &[0, 1], 2, &LinearSvcConfig::default()).unwrap();
    assert!(m.weights()[(1, 0)] > 0.0);
    assert_eq!(TrainedModel::LinearSvc(m).predict(&x).unwrap(), vec![0, 1]);
}

#[test]
fn svc_objective_monotone_and_separable_large_c() {
    let (x, y) = separable_blobs();
    let m = fit_linear_svc(&x, &y, 2, &LinearSvcConfig::default().with_c(100.0)).unwrap();
    for hist in m.objective_history() {
        for pair in hist.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9);
        }
    }
    assert_eq!(TrainedModel::LinearSvc(m).predict(&x).unwrap(), y);
}

#[test]
fn svc_l1_sparsity_against_ista_oracle() {
    let n = 120;
    let x = Matrix::from_fn(n, 100, |r, c| jitter((r * 100 + c) as u64 + 17) * 2.0);
    let score = |r: usize| (0..10).map(|c| x[(r, c)]).sum::<f64>();
    let y: Vec<usize> = (0..n).map(|r| usize::from(score(r) > 0.0)).collect();
    let signs: Vec<f64> = y.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
    let c = 0.01;

    let (w_oracle, _) = ista_l1(&x, &signs, c, 20_000);
    let oracle_zero = w_oracle[10..].iter().filter(|v| v.abs() < 1e-10).count();
    let m = fit_linear_svc(&x, &y, 2, &LinearSvcConfig::default().with_penalty(Penalty::L1).with_c(c)).unwrap();
    let ours_zero = (10..100).filter(|&j| m.weights()[(1, j)] == 0.0).count();
    println!("noise weights exactly zero: solver {ours_zero}/90, oracle {oracle_zero}/90");
    assert!(ours_zero >= 45);
    assert!(oracle_zero >= 45);
}

#[test]
fn svc_single_informative_feature() {
    let n = 60;
    let x = Matrix::from_fn(n, 5, |r, c| {
        if c == 3 {
            if r % 2 == 0 { -1.0 } else { 1.0 }
        } else {
            jitter((r * 5 + c) as u64)
        }
    });
    let y: Vec<usize> = (0..n).map(|r| r % 2).collect();
    let m = fit_linear_svc(&x, &y, 2, &LinearSvcConfig::default()).unwrap();
    let w = m.weights().row(1);
    let top = (0..5).max_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs())).unwrap();
    assert_eq!(top, 3);
}

#[test]
fn svc_scores_consistent_with_predict() {
    let (x, y) = separable_blobs();
    let m = svc(&x, &y, 2, LinearSvcConfig::default());
    let s = m.decision_scores(&x).unwrap();
    let p = m.predict(&x).unwrap();
    for r in 0..x.nrows() {
        assert_eq!(argmax_lowest(s.row(r).iter().copied()), p[r]);
    }
}

#[test]
fn ridge_normal_equation_residual() {
    let x = Matrix::from_fn(40, 6, |r, c| jitter((r * 6 + c) as u64 + 99));
    let y: Vec<f64> = (0..40).map(|r| jitter(r as u64 + 7) * 3.0).collect();
    for lambda in [0.0, 0.1, 1.0, 10.0] {
        let m = fit_ridge(&x, &y, &RidgeConfig { lambda }).unwrap();
        let mut gram = x.tr_mul(&x);
        for i in 0..6 {
            gram[(i, i)] += lambda;
        }
        let residual = &gram * m.coefficients() - x.tr_mul(&DVector::from_column_slice(&y));
        assert!(residual.amax() < 1e-8, "lambda {lambda}: residual {}", residual.amax());
        assert!(!m.rank_deficient());
    }
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    let x = Matrix::from_fn(7, 3, |r, c| jitter((r * 3 + c) as u64 + 5) * 2.0);
    let y = vec![0, 1, 2, 0, 1, 2, 1];
    let cfg = MlpConfig {
        max_iter: 3,
        ..MlpConfig::default().with_hidden(5).with_seed(11)
    };
    let net = fit_mlp(&x, &y, 3, &cfg).unwrap();
    let (_, grad) = net.loss_and_flat_gradient(&x, &y, 1e-3);
    let theta = net.flat_params();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let mut plus = theta.clone();
        plus[i] += h;
        let mut minus = theta.clone();
        minus[i] -= h;
        let fp = net.with_flat_params(&plus).loss_and_flat_gradient(&x, &y, 1e-3).0;
        let fm = net.with_flat_params(&minus).loss_and_flat_gradient(&x, &y, 1e-3).0;
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8));
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn mlp_xor_success_count() {
    let (x, y) = xor();
    let solved = (0..10u64)
        .filter(|&seed| {
            let m = fit_mlp(&x, &y, 2, &MlpConfig::default().with_hidden(8).with_seed(seed)).unwrap();
            TrainedModel::Mlp(m).predict(&x).unwrap() == y
        })
        .count();
    println!("XOR solved for {solved}/10 seeds");
    assert!(solved >= 8);
}

#[test]
fn mlp_probabilities_and_loss_decrease() {
    let (x, y) = separable_blobs();
    let m = fit_mlp(&x, &y, 2, &MlpConfig::default().with_seed(1)).unwrap();
    let curve = m.loss_curve().to_vec();
    assert!(curve.last().unwrap() <= &curve[0]);
    let p = TrainedModel::Mlp(m).decision_scores(&x).unwrap();
    for r in 0..p.nrows() {
        assert!((p.row(r).sum() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn forest_deterministic_and_votes_normalized() {
    let (x, y) = separable_blobs();
    let cfg = ForestConfig::default().with_seed(3);
    let a = TrainedModel::Forest(fit_forest(&x, &y, 2, &cfg).unwrap());
    let b = TrainedModel::Forest(fit_forest(&x, &y, 2, &cfg).unwrap());
    assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
    assert_eq!(a.to_bytes(), b.to_bytes());
    let v = a.decision_scores(&x).unwrap();
    for r in 0..v.nrows() {
        assert!(v.row(r).iter().all(|&f| (0.0..=1.0).contains(&f)));
        assert!((v.row(r).sum() - 1.0).abs() < 1e-12);
    }
    match a.feature_weights().unwrap() {
        FeatureWeights::Importance(imp) => assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9),
        FeatureWeights::Linear(_) => panic!("forest exposes importances"),
    }
    assert_eq!(gini(&[2, 2]), 0.5);
}

#[test]
fn predictions_in_label_range_and_tie_break() {
    assert_eq!(argmax_lowest([0.0; 4]), 0);
    let x = Matrix::from_fn(12, 3, |r, c| jitter((r * 3 + c) as u64));
    let y: Vec<usize> = (0..12).map(|r| r % 4).collect();
    for cfg in [
        LearnerConfig::Svc(LinearSvcConfig::default()),
        LearnerConfig::Mlp(MlpConfig::default().with_hidden(4)),
        LearnerConfig::Forest(ForestConfig::default().with_trees(10)),
    ] {
        let m = cfg.fit(&x, &y, 4).unwrap();
        let probe = Matrix::from_fn(30, 3, |r, c| 10.0 * jitter((r * 3 + c) as u64 + 1000));
        assert!(m.predict(&probe).unwrap().iter().all(|&l| l < 4));
        assert!(m.predict(&Matrix::zeros(2, 4)).is_err());
    }
}

#[test]
fn mlp_has_no_feature_weights() {
    let (x, y) = xor();
    let m = LearnerConfig::Mlp(MlpConfig::default().with_hidden(2)).fit(&x, &y, 2).unwrap();
    assert!(m.feature_weights().is_err());
}
