//! Random forest of Gini CART trees grown to purity.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax_lowest, check_training_labels};
use crate::data::Matrix;
use crate::error::Result;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features examined per split; `None` means `floor(sqrt(n_features))`.
    pub features_per_split: Option<usize>,
    /// Draw `n_samples` rows with replacement for each tree.
    pub bootstrap: bool,
    /// Nodes with fewer samples become leaves.
    pub min_samples_split: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 500,
            features_per_split: None,
            bootstrap: true,
            min_samples_split: 2,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn with_trees(mut self, n: usize) -> Self {
        self.n_trees = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        class: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn predict_row(&self, x: &Matrix, row: usize) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { class } => return class,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[(row, feature)] <= threshold { left } else { right },
            }
        }
    }
}

/// Fitted forest.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub(crate) trees: Vec<Tree>,
    pub(crate) n_classes: usize,
    pub(crate) n_features: usize,
    pub(crate) importances: Vec<f64>,
}

impl Forest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Mean decrease in Gini impurity, normalized to sum to 1 (all zeros if no tree split).
    pub fn importances(&self) -> &[f64] {
        &self.importances
    }

    /// Fraction of trees voting for each class.
    pub(crate) fn vote_fractions(&self, x: &Matrix) -> Matrix {
        let mut votes = Matrix::zeros(x.nrows(), self.n_classes);
        for tree in &self.trees {
            for r in 0..x.nrows() {
                votes[(r, tree.predict_row(x, r))] += 1.0;
            }
        }
        votes / self.trees.len() as f64
    }
}

/// Gini impurity of a class-count vector.
pub fn gini(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [usize],
    n_classes: usize,
    max_features: usize,
    min_split: usize,
    total: f64,
    nodes: Vec<Node>,
    importance: Vec<f64>,
    rng: ChaCha8Rng,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    impurity: f64,
    split_at: usize,
    order: Vec<usize>,
}

impl Builder<'_> {
    fn counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &r in rows {
            c[self.y[r]] += 1;
        }
        c
    }

    fn leaf(&mut self, counts: &[usize]) -> usize {
        let scores: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        self.nodes.push(Node::Leaf {
            class: argmax_lowest(scores.iter().copied()),
        });
        self.nodes.len() - 1
    }

    fn best_split_on(&self, rows: &[usize], feature: usize, parent: &[usize]) -> Option<Candidate> {
        let mut order = rows.to_vec();
        order.sort_by(|&a, &b| self.x[(a, feature)].total_cmp(&self.x[(b, feature)]));
        let n = order.len();
        let mut left = vec![0usize; self.n_classes];
        let mut right = parent.to_vec();
        let mut best: Option<(f64, usize)> = None;
        for i in 0..n - 1 {
            let l = self.y[order[i]];
            left[l] += 1;
            right[l] -= 1;
            let (a, b) = (self.x[(order[i], feature)], self.x[(order[i + 1], feature)]);
            if a >= b {
                continue;
            }
            let nl = (i + 1) as f64;
            let nr = (n - i - 1) as f64;
            let imp = (nl * gini(&left) + nr * gini(&right)) / n as f64;
            if best.is_none_or(|(bi, _)| imp < bi - 1e-12) {
                best = Some((imp, i + 1));
            }
        }
        best.map(|(impurity, split_at)| {
            let threshold = 0.5 * (self.x[(order[split_at - 1], feature)] + self.x[(order[split_at], feature)]);
            Candidate {
                feature,
                threshold,
                impurity,
                split_at,
                order,
            }
        })
    }

    fn grow(&mut self, rows: Vec<usize>) -> usize {
        let counts = self.counts(&rows);
        let node_gini = gini(&counts);
        if rows.len() < self.min_split || node_gini == 0.0 {
            return self.leaf(&counts);
        }
        let mut features: Vec<usize> = (0..self.x.ncols()).collect();
        features.shuffle(&mut self.rng);
        let mut best: Option<Candidate> = None;
        for (visited, &f) in features.iter().enumerate() {
            // keep drawing features past the budget until one admits a split
            if visited >= self.max_features && best.is_some() {
                break;
            }
            if let Some(c) = self.best_split_on(&rows, f, &counts) {
                if best.as_ref().is_none_or(|b| c.impurity < b.impurity - 1e-12) {
                    best = Some(c);
                }
            }
        }
        let Some(split) = best else {
            return self.leaf(&counts);
        };
        let n = rows.len() as f64;
        self.importance[split.feature] += n / self.total * (node_gini - split.impurity);
        let left_rows = split.order[..split.split_at].to_vec();
        let right_rows = split.order[split.split_at..].to_vec();
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { class: 0 });
        let left = self.grow(left_rows);
        let right = self.grow(right_rows);
        self.nodes[at] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        at
    }
}

fn fit_tree(x: &Matrix, y: &[usize], n_classes: usize, cfg: &ForestConfig, max_features: usize, tree_seed: u64) -> (Tree, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);
    let n = x.nrows();
    let rows: Vec<usize> = if cfg.bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut b = Builder {
        x,
        y,
        n_classes,
        max_features,
        min_split: cfg.min_samples_split.max(2),
        total: rows.len() as f64,
        nodes: Vec::new(),
        importance: vec![0.0; x.ncols()],
        rng,
    };
    b.grow(rows);
    (Tree { nodes: b.nodes }, b.importance)
}

/// Fits `n_trees` trees; tree `t` uses a seed derived from `(cfg.seed, t)`,
/// so the result does not depend on the thread schedule.
pub fn fit_forest(x: &Matrix, y: &[usize], n_classes: usize, cfg: &ForestConfig) -> Result<Forest> {
    check_training_labels(x, y, n_classes)?;
    if cfg.n_trees == 0 {
        return Err(crate::Error::invalid("a forest needs at least one tree"));
    }
    let p = x.ncols();
    let max_features = cfg
        .features_per_split
        .unwrap_or_else(|| ((p as f64).sqrt().floor() as usize).max(1))
        .clamp(1, p);
    let fitted: Vec<(Tree, Vec<f64>)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| fit_tree(x, y, n_classes, cfg, max_features, seed::derive(cfg.seed, &[t as u64])))
        .collect();
    let mut importances = vec![0.0; p];
    let mut trees = Vec::with_capacity(fitted.len());
    for (tree, imp) in fitted {
        let s: f64 = imp.iter().sum();
        if s > 0.0 {
            for (acc, v) in importances.iter_mut().zip(&imp) {
                *acc += v / s;
            }
        }
        trees.push(tree);
    }
    let s: f64 = importances.iter().sum();
    if s > 0.0 {
        importances.iter_mut().for_each(|v| *v /= s);
    }
    Ok(Forest {
        trees,
        n_classes,
        n_features: p,
        importances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gini_values() {
        assert_eq!(gini(&[2, 2]), 0.5);
        assert_eq!(gini(&[4, 0]), 0.0);
        assert!((gini(&[1, 1, 1]) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_tree_interpolates() {
        let x = Matrix::from_row_slice(
            8,
            2,
            &[0.0, 0.0, 1.0, 0.3, 0.2, 1.0, 1.0, 1.0, 0.5, 0.5, 0.7, 0.1, 0.1, 0.8, 0.9, 0.6],
        );
        let y = vec![0, 1, 1, 0, 2, 2, 0, 1];
        let cfg = ForestConfig {
            n_trees: 1,
            bootstrap: false,
            ..ForestConfig::default()
        };
        let f = fit_forest(&x, &y, 3, &cfg).unwrap();
        let votes = f.vote_fractions(&x);
        for (r, &l) in y.iter().enumerate() {
            assert_eq!(votes[(r, l)], 1.0);
        }
    }

    #[test]
    fn constant_feature_has_no_importance() {
        let x = Matrix::from_fn(30, 3, |r, c| match c {
            0 => 5.0,
            1 => (r % 3) as f64 + 0.1 * (r as f64),
            _ => ((r * 7) % 5) as f64,
        });
        let y: Vec<usize> = (0..30).map(|r| r % 3).collect();
        let f = fit_forest(&x, &y, 3, &ForestConfig::default().with_trees(20)).unwrap();
        assert_eq!(f.importances()[0], 0.0);
        assert!((f.importances().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
