//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use stackdecode::data::Matrix;

/// Deterministic uniform noise in [-0.5, 0.5) from an integer key.
pub fn jitter(key: u64) -> f64 {
    let mut z = key.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x2545_F491_4F6C_DD1D);
    z ^= z >> 29;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 32;
    (z >> 11) as f64 / (1u64 << 53) as f64 - 0.5
}

/// 20 points in two separable 2D blobs, labels 0 then 1.
pub fn separable_blobs() -> (Matrix, Vec<usize>) {
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for i in 0..20u64 {
        let class = (i % 2) as usize;
        let (cx, cy) = if class == 0 { (-1.5, -1.0) } else { (1.5, 1.0) };
        rows.push(cx + 1.2 * jitter(2 * i));
        rows.push(cy + 1.2 * jitter(2 * i + 1));
        y.push(class);
    }
    (Matrix::from_row_slice(20, 2, &rows), y)
}

/// `½(‖w‖² + b²) + C Σ max(0, 1 − s_i(w·x_i + b))²`.
pub fn sq_hinge_l2(x: &Matrix, s: &[f64], w: &[f64], b: f64, c: f64) -> f64 {
    let reg = 0.5 * (w.iter().map(|v| v * v).sum::<f64>() + b * b);
    let loss: f64 = (0..x.nrows())
        .map(|i| {
            let m = s[i] * ((0..w.len()).map(|j| x[(i, j)] * w[j]).sum::<f64>() + b);
            (1.0 - m).max(0.0).powi(2)
        })
        .sum();
    reg + c * loss
}

/// Brute-force minimizer of the 2D binary l2 objective over
/// `w ∈ [-3, 3]² × b ∈ [-3, 3]` on a 0.05 grid.
pub fn grid_search_svc_2d(x: &Matrix, s: &[f64], c: f64) -> ([f64; 2], f64) {
    let steps: Vec<f64> = (0..=120).map(|k| -3.0 + 0.05 * k as f64).collect();
    let mut best = (f64::INFINITY, [0.0, 0.0], 0.0);
    for &w0 in &steps {
        for &w1 in &steps {
            for &b in &steps {
                let f = sq_hinge_l2(x, s, &[w0, w1], b, c);
                if f < best.0 {
                    best = (f, [w0, w1], b);
                }
            }
        }
    }
    (best.1, best.2)
}

/// Proximal gradient (ISTA) on the binary l1 squared-hinge objective
/// `‖w‖₁ + |b| + C Σ max(0, 1 − s_i(w·x_i + b))²`.
pub fn ista_l1(x: &Matrix, s: &[f64], c: f64, iterations: usize) -> (Vec<f64>, f64) {
    let (n, p) = (x.nrows(), x.ncols());
    let mut aug = Matrix::from_element(n, p + 1, 1.0);
    aug.columns_mut(0, p).copy_from(x);
    let spectral = aug.clone().svd(false, false).singular_values.max();
    let step = 1.0 / (2.0 * c * spectral * spectral);
    let mut v = vec![0.0; p + 1];
    for _ in 0..iterations {
        let mut grad = vec![0.0; p + 1];
        for i in 0..n {
            let m = s[i] * (0..=p).map(|j| aug[(i, j)] * v[j]).sum::<f64>();
            let h = (1.0 - m).max(0.0);
            if h > 0.0 {
                for j in 0..=p {
                    grad[j] -= 2.0 * c * s[i] * aug[(i, j)] * h;
                }
            }
        }
        for j in 0..=p {
            let z = v[j] - step * grad[j];
            v[j] = z.signum() * (z.abs() - step).max(0.0);
        }
    }
    let b = v.pop().unwrap();
    (v, b)
}

/// 4-point XOR problem.
pub fn xor() -> (Matrix, Vec<usize>) {
    (
        Matrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]),
        vec![0, 1, 1, 0],
    )
}

/// Hand-checked balanced-accuracy cases: (y_true, y_pred, K, expected).
pub fn balanced_accuracy_cases() -> Vec<(Vec<usize>, Vec<usize>, usize, f64)> {
    vec![
        (vec![0, 0, 1, 1], vec![0, 1, 1, 1], 2, 0.75),
        (vec![0, 1, 2], vec![0, 1, 2], 3, 1.0),
        (vec![0, 1, 2, 3], vec![0, 0, 0, 0], 4, 0.25),
        (vec![0, 0, 0, 1], vec![0, 0, 0, 0], 2, 0.5),
        (vec![0, 0, 0, 1], vec![1, 1, 1, 1], 2, 0.5),
        (vec![0, 0, 1, 1, 2, 2], vec![0, 1, 1, 2, 2, 0], 3, 0.5),
        (vec![0, 0, 0, 0, 1], vec![0, 0, 0, 1, 1], 2, 0.875),
        // class 2 never occurs in y_true and is excluded
        (vec![0, 1, 1], vec![2, 1, 1], 3, 0.5),
        (vec![1, 1, 1], vec![1, 0, 1], 2, 2.0 / 3.0),
        (vec![0, 1, 2, 0, 1, 2], vec![1, 2, 0, 1, 2, 0], 3, 0.0),
        (vec![0, 0, 1, 2, 2, 2], vec![0, 2, 1, 2, 2, 1], 3, (0.5 + 1.0 + 2.0 / 3.0) / 3.0),
        (vec![3, 3, 0, 0], vec![3, 0, 0, 0], 4, 0.75),
    ]
}
