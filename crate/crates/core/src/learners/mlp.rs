//! Multi-layer perceptron: ReLU hidden layers, softmax output, cross-entropy
//! loss with an L2 penalty, trained by Adam on shuffled mini-batches.
//!
//! Training stops after `max_iter` epochs or once the epoch loss has failed to
//! improve on the best loss by `tol` for more than `n_iter_no_change`
//! consecutive epochs.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::check_training_labels;
use crate::data::{select_rows, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    /// Units per hidden layer; the default is a single block of 100.
    pub hidden_layers: Vec<usize>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 penalty on weights.
    pub alpha: f64,
    /// Maximum number of epochs.
    pub max_iter: usize,
    /// `None` means `min(200, n_samples)`.
    pub batch_size: Option<usize>,
    pub tol: f64,
    pub n_iter_no_change: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![100],
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            alpha: 1e-4,
            max_iter: 1000,
            batch_size: None,
            tol: 1e-4,
            n_iter_no_change: 10,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn with_hidden(mut self, units: usize) -> Self {
        self.hidden_layers = vec![units];
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Fully connected layer, `out = input · weights + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// fan_in × fan_out
    pub weights: Matrix,
    pub bias: DVector<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Matrix::zeros(fan_in, fan_out),
            bias: DVector::zeros(fan_out),
        }
    }

    fn forward(&self, input: &Matrix) -> Matrix {
        let mut out = input * &self.weights;
        for mut row in out.row_iter_mut() {
            row += self.bias.transpose();
        }
        out
    }

    fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Fitted network.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub(crate) layers: Vec<Dense>,
    pub(crate) loss_curve: Vec<f64>,
}

impl Mlp {
    /// Builds a network from explicit layers; consecutive shapes must chain.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].weights.ncols() != pair[1].weights.nrows() {
                return Err(Error::invalid("layer shapes do not chain"));
            }
        }
        if layers.iter().any(|l| l.bias.len() != l.weights.ncols()) {
            return Err(Error::invalid("bias length differs from layer width"));
        }
        Ok(Self {
            layers,
            loss_curve: Vec::new(),
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Mean training loss per epoch.
    pub fn loss_curve(&self) -> &[f64] {
        &self.loss_curve
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().unwrap().weights.ncols()
    }

    /// Softmax class probabilities, one row per sample.
    pub fn predict_proba(&self, x: &Matrix) -> Matrix {
        let (_, logits) = self.forward(x);
        softmax_rows(logits)
    }

    /// Hidden activations (post-ReLU) and output logits.
    fn forward(&self, x: &Matrix) -> (Vec<Matrix>, Matrix) {
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(&current);
            if i + 1 < self.layers.len() {
                z.apply(|v| *v = v.max(0.0));
                acts.push(z.clone());
            }
            current = z;
        }
        (acts, current)
    }

    /// Mean cross-entropy plus `alpha/(2n) Σ‖W‖²` and its gradient.
    pub fn loss_and_gradient(&self, x: &Matrix, y: &[usize], alpha: f64) -> (f64, Vec<Dense>) {
        let n = x.nrows() as f64;
        let (acts, logits) = self.forward(x);
        let proba = softmax_rows(logits);
        let mut loss = 0.0;
        for (i, &label) in y.iter().enumerate() {
            loss -= proba[(i, label)].max(1e-300).ln();
        }
        loss /= n;
        let sq: f64 = self.layers.iter().map(|l| l.weights.norm_squared()).sum();
        loss += 0.5 * alpha * sq / n;

        let mut delta = proba;
        for (i, &label) in y.iter().enumerate() {
            delta[(i, label)] -= 1.0;
        }
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        for li in (0..self.layers.len()).rev() {
            let input = if li == 0 { x } else { &acts[li - 1] };
            let layer = &self.layers[li];
            let mut gw = input.tr_mul(&delta);
            gw += &layer.weights * alpha;
            gw /= n;
            let gb = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum() / n));
            if li > 0 {
                let mut back = &delta * layer.weights.transpose();
                let prev = &acts[li - 1];
                back.zip_apply(prev, |d, a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = back;
            }
            grads.push(Dense {
                weights: gw,
                bias: gb,
            });
        }
        grads.reverse();
        (loss, grads)
    }

    /// All parameters, layer by layer: weights (column-major) then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    /// Copy of this network with parameters replaced from [`Mlp::flat_params`] order.
    pub fn with_flat_params(&self, params: &[f64]) -> Self {
        let mut layers = self.layers.clone();
        let mut it = params.iter().copied();
        for l in &mut layers {
            for v in l.weights.iter_mut() {
                *v = it.next().expect("parameter count");
            }
            for v in l.bias.iter_mut() {
                *v = it.next().expect("parameter count");
            }
        }
        Self {
            layers,
            loss_curve: Vec::new(),
        }
    }

    /// Loss and gradient flattened in [`Mlp::flat_params`] order.
    pub fn loss_and_flat_gradient(&self, x: &Matrix, y: &[usize], alpha: f64) -> (f64, Vec<f64>) {
        let (loss, grads) = self.loss_and_gradient(x, y, alpha);
        (loss, flatten(&grads))
    }
}

fn flatten(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::with_capacity(layers.iter().map(Dense::len).sum());
    for l in layers {
        out.extend(l.weights.iter());
        out.extend(l.bias.iter());
    }
    out
}

fn softmax_rows(mut m: Matrix) -> Matrix {
    for mut row in m.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let s = row.sum();
        row /= s;
    }
    m
}

fn glorot<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Dense {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Dense {
        weights: Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..bound)),
        bias: DVector::from_fn(fan_out, |_, _| rng.random_range(-bound..bound)),
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Fits the network on `x`, `y` with the configured Adam schedule.
pub fn fit_mlp(x: &Matrix, y: &[usize], n_classes: usize, cfg: &MlpConfig) -> Result<Mlp> {
    check_training_labels(x, y, n_classes)?;
    if cfg.hidden_layers.iter().any(|&h| h == 0) {
        return Err(Error::invalid("hidden layers need at least one unit"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sizes = vec![x.ncols()];
    sizes.extend(&cfg.hidden_layers);
    sizes.push(n_classes);
    let layers: Vec<Dense> = sizes.windows(2).map(|w| glorot(w[0], w[1], &mut rng)).collect();
    let mut net = Mlp::from_layers(layers)?;

    let n = x.nrows();
    let batch = cfg.batch_size.unwrap_or(200).clamp(1, n);
    let n_params = net.flat_params().len();
    let mut adam = Adam {
        m: vec![0.0; n_params],
        v: vec![0.0; n_params],
        t: 0,
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    let mut no_improve = 0;

    for epoch in 0..cfg.max_iter {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let (xb, yb);
            let (xr, yr): (&Matrix, &[usize]) = if chunk.len() == n && batch == n {
                (x, y)
            } else {
                xb = select_rows(x, chunk);
                yb = chunk.iter().map(|&i| y[i]).collect::<Vec<_>>();
                (&xb, &yb)
            };
            let (loss, grads) = net.loss_and_gradient(xr, yr, cfg.alpha);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    what: "loss",
                    iteration: epoch,
                });
            }
            total += loss * chunk.len() as f64;
            adam.t += 1;
            let lr = cfg.learning_rate * (1.0 - cfg.beta2.powi(adam.t)).sqrt()
                / (1.0 - cfg.beta1.powi(adam.t));
            let mut offset = 0;
            for (layer, g) in net.layers.iter_mut().zip(&grads) {
                for (p, gv) in layer
                    .weights
                    .iter_mut()
                    .chain(layer.bias.iter_mut())
                    .zip(g.weights.iter().chain(g.bias.iter()))
                {
                    let m = &mut adam.m[offset];
                    let v = &mut adam.v[offset];
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gv;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gv * gv;
                    *p -= lr * *m / (v.sqrt() + cfg.epsilon);
                    offset += 1;
                }
            }
        }
        let epoch_loss = total / n as f64;
        net.loss_curve.push(epoch_loss);
        if epoch_loss > best - cfg.tol {
            no_improve += 1;
        } else {
            no_improve = 0;
        }
        best = best.min(epoch_loss);
        if no_improve > cfg.n_iter_no_change {
            break;
        }
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_is_uniform() {
        let net = Mlp::from_layers(vec![Dense::zeros(3, 5), Dense::zeros(5, 4)]).unwrap();
        let p = net.predict_proba(&Matrix::zeros(2, 3));
        assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Mlp::from_layers(vec![glorot(4, 6, &mut rng), glorot(6, 3, &mut rng)]).unwrap();
        let x = Matrix::from_fn(7, 4, |_, _| rng.random_range(-1.0..1.0));
        let y = vec![0, 1, 2, 0, 1, 2, 1];
        let (_, g) = net.loss_and_flat_gradient(&x, &y, 1e-2);
        let p = net.flat_params();
        let h = 1e-5;
        for j in 0..p.len() {
            let mut plus = p.clone();
            plus[j] += h;
            let mut minus = p.clone();
            minus[j] -= h;
            let fp = net.with_flat_params(&plus).loss_and_gradient(&x, &y, 1e-2).0;
            let fm = net.with_flat_params(&minus).loss_and_gradient(&x, &y, 1e-2).0;
            let fd = (fp - fm) / (2.0 * h);
            let rel = (fd - g[j]).abs() / fd.abs().max(g[j].abs()).max(1e-8);
            assert!(rel < 1e-4 || (fd - g[j]).abs() < 1e-9, "param {j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn loss_decreases() {
        let x = Matrix::from_fn(40, 3, |r, c| ((r * 3 + c * 5) % 9) as f64 / 4.0 - 1.0 + (r % 2) as f64);
        let y: Vec<usize> = (0..40).map(|r| r % 2).collect();
        let net = fit_mlp(&x, &y, 2, &MlpConfig::default().with_hidden(10)).unwrap();
        let curve = net.loss_curve();
        assert!(curve.last().unwrap() <= &curve[0]);
    }
}
