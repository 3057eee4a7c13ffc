//! Classifier families: linear SVC, MLP, random forest, plus ridge regression.
//!
//! Every fit returns an immutable [`TrainedModel`]. Predictions take the
//! argmax of per-class scores, breaking ties toward the lowest class index.

mod forest;
mod mlp;
mod ridge;
mod svc;

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use forest::{fit_forest, gini, Forest, ForestConfig};
pub use mlp::{fit_mlp, Dense, Mlp, MlpConfig};
pub use ridge::{fit_ridge, Ridge, RidgeConfig};
pub use svc::{binary_objective, fit_linear_svc, LinearSvc, LinearSvcConfig};

use crate::data::Matrix;
use crate::error::{Error, Result};

/// Regularization used by the linear SVC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    L1,
    #[default]
    L2,
}

impl fmt::Display for Penalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Penalty::L1 => "l1",
            Penalty::L2 => "l2",
        })
    }
}

impl FromStr for Penalty {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Penalty::L1),
            "l2" => Ok(Penalty::L2),
            _ => Err(Error::Unknown {
                kind: "penalty",
                name: s.into(),
            }),
        }
    }
}

/// Classifier families usable as the final (meta) classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Svc,
    Mlp,
    Forest,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Svc, Family::Mlp, Family::Forest];

    pub fn name(self) -> &'static str {
        match self {
            Family::Svc => "svc",
            Family::Mlp => "mlp",
            Family::Forest => "forest",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "svc" | "linearsvc" | "linear-svc" => Ok(Family::Svc),
            "mlp" => Ok(Family::Mlp),
            "forest" | "rf" | "randomforest" | "random-forest" => Ok(Family::Forest),
            _ => Err(Error::Unknown {
                kind: "classifier family",
                name: s.into(),
            }),
        }
    }
}

/// Hyperparameters for one of the classifier families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum LearnerConfig {
    Svc(LinearSvcConfig),
    Mlp(MlpConfig),
    Forest(ForestConfig),
}

impl LearnerConfig {
    pub fn family(&self) -> Family {
        match self {
            LearnerConfig::Svc(_) => Family::Svc,
            LearnerConfig::Mlp(_) => Family::Mlp,
            LearnerConfig::Forest(_) => Family::Forest,
        }
    }

    /// Replaces the random seed of stochastic learners; SVC is deterministic.
    pub fn reseeded(&self, seed: u64) -> Self {
        match self {
            LearnerConfig::Svc(c) => LearnerConfig::Svc(c.clone()),
            LearnerConfig::Mlp(c) => LearnerConfig::Mlp(MlpConfig { seed, ..c.clone() }),
            LearnerConfig::Forest(c) => LearnerConfig::Forest(ForestConfig { seed, ..c.clone() }),
        }
    }

    pub fn fit(&self, x: &Matrix, y: &[usize], n_classes: usize) -> Result<TrainedModel> {
        Ok(match self {
            LearnerConfig::Svc(c) => TrainedModel::LinearSvc(fit_linear_svc(x, y, n_classes, c)?),
            LearnerConfig::Mlp(c) => TrainedModel::Mlp(fit_mlp(x, y, n_classes, c)?),
            LearnerConfig::Forest(c) => TrainedModel::Forest(fit_forest(x, y, n_classes, c)?),
        })
    }
}

/// Rejects empty or single-class training sets and out-of-range labels.
pub(crate) fn check_training_labels(x: &Matrix, y: &[usize], n_classes: usize) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::invalid(format!(
            "{} rows but {} labels",
            x.nrows(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= n_classes) {
        return Err(Error::invalid(format!("label {bad} outside 0..{n_classes}")));
    }
    if y.iter().all(|&l| l == y[0]) {
        return Err(Error::SingleClass);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite training features"));
    }
    Ok(())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_lowest(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Per-feature weights or importances of a fitted model.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureWeights {
    /// K × n_features linear weights.
    Linear(Matrix),
    /// Nonnegative importances summing to 1.
    Importance(Vec<f64>),
}

/// A fitted model of any family.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    LinearSvc(LinearSvc),
    Mlp(Mlp),
    Forest(Forest),
    Ridge(Ridge),
}

impl TrainedModel {
    pub fn family_name(&self) -> &'static str {
        match self {
            TrainedModel::LinearSvc(_) => "svc",
            TrainedModel::Mlp(_) => "mlp",
            TrainedModel::Forest(_) => "forest",
            TrainedModel::Ridge(_) => "ridge",
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            TrainedModel::LinearSvc(m) => m.weights.ncols(),
            TrainedModel::Mlp(m) => m.n_inputs(),
            TrainedModel::Forest(m) => m.n_features,
            TrainedModel::Ridge(m) => m.coef.len(),
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            TrainedModel::LinearSvc(m) => m.weights.nrows(),
            TrainedModel::Mlp(m) => m.n_outputs(),
            TrainedModel::Forest(m) => m.n_classes,
            TrainedModel::Ridge(_) => 0,
        }
    }

    fn check_dims(&self, x: &Matrix) -> Result<()> {
        let expected = self.n_features();
        if x.ncols() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                found: x.ncols(),
            });
        }
        Ok(())
    }

    /// Per-class scores: SVC margins, MLP softmax probabilities or forest vote fractions.
    pub fn decision_scores(&self, x: &Matrix) -> Result<Matrix> {
        self.check_dims(x)?;
        match self {
            TrainedModel::LinearSvc(m) => Ok(m.scores(x)),
            TrainedModel::Mlp(m) => Ok(m.predict_proba(x)),
            TrainedModel::Forest(m) => Ok(m.vote_fractions(x)),
            TrainedModel::Ridge(_) => Err(Error::UnsupportedFamily {
                family: "ridge",
                operation: "decision_scores",
            }),
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let scores = self.decision_scores(x)?;
        Ok(scores
            .row_iter()
            .map(|r| argmax_lowest(r.iter().copied()))
            .collect())
    }

    /// Real-valued predictions of a ridge model.
    pub fn regress(&self, x: &Matrix) -> Result<DVector<f64>> {
        match self {
            TrainedModel::Ridge(m) => m.predict_values(x),
            other => Err(Error::UnsupportedFamily {
                family: other.family_name(),
                operation: "regress",
            }),
        }
    }

    pub fn feature_weights(&self) -> Result<FeatureWeights> {
        match self {
            TrainedModel::LinearSvc(m) => Ok(FeatureWeights::Linear(m.weights.clone())),
            TrainedModel::Forest(m) => Ok(FeatureWeights::Importance(m.importances.clone())),
            other => Err(Error::UnsupportedFamily {
                family: other.family_name(),
                operation: "feature_weights",
            }),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        codec::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        codec::decode(bytes)
    }
}

/// Versioned little-endian model blobs: magic `ENSM`, u32 version, u8 family tag, payload.
pub(crate) mod codec {
    use super::*;

    pub const MAGIC: &[u8; 4] = b"ENSM";
    pub const VERSION: u32 = 1;

    #[derive(Default)]
    pub struct Writer(pub Vec<u8>);

    impl Writer {
        pub fn u8(&mut self, v: u8) {
            self.0.push(v);
        }
        pub fn u64(&mut self, v: u64) {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
        pub fn f64(&mut self, v: f64) {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
        pub fn str(&mut self, s: &str) {
            self.u64(s.len() as u64);
            self.0.extend_from_slice(s.as_bytes());
        }
        pub fn matrix(&mut self, m: &Matrix) {
            self.u64(m.nrows() as u64);
            self.u64(m.ncols() as u64);
            m.iter().for_each(|v| self.f64(*v));
        }
        pub fn floats(&mut self, v: &[f64]) {
            self.u64(v.len() as u64);
            v.iter().for_each(|x| self.f64(*x));
        }
    }

    pub struct Reader<'a> {
        pub bytes: &'a [u8],
        pub pos: usize,
    }

    impl<'a> Reader<'a> {
        pub fn new(bytes: &'a [u8]) -> Self {
            Self { bytes, pos: 0 }
        }
        pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
            let end = self
                .pos
                .checked_add(n)
                .filter(|&e| e <= self.bytes.len())
                .ok_or_else(|| Error::Decode("truncated".into()))?;
            let s = &self.bytes[self.pos..end];
            self.pos = end;
            Ok(s)
        }
        pub fn u8(&mut self) -> Result<u8> {
            Ok(self.take(1)?[0])
        }
        pub fn u32(&mut self) -> Result<u32> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
        }
        pub fn u64(&mut self) -> Result<u64> {
            Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
        }
        pub fn len(&mut self) -> Result<usize> {
            let n = self.u64()? as usize;
            if n > self.bytes.len() {
                return Err(Error::Decode(format!("implausible length {n}")));
            }
            Ok(n)
        }
        pub fn f64(&mut self) -> Result<f64> {
            Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
        }
        pub fn str(&mut self) -> Result<String> {
            let n = self.len()?;
            String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Decode(e.to_string()))
        }
        pub fn matrix(&mut self) -> Result<Matrix> {
            let r = self.len()?;
            let c = self.len()?;
            let n = r.checked_mul(c).ok_or_else(|| Error::Decode("size overflow".into()))?;
            let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
            Ok(Matrix::from_vec(r, c, data))
        }
        pub fn floats(&mut self) -> Result<Vec<f64>> {
            let n = self.len()?;
            (0..n).map(|_| self.f64()).collect()
        }
        pub fn finished(&self) -> bool {
            self.pos == self.bytes.len()
        }
    }

    pub fn encode(model: &TrainedModel) -> Vec<u8> {
        let mut w = Writer::default();
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&VERSION.to_le_bytes());
        write_model(&mut w, model);
        w.0
    }

    pub fn write_model(w: &mut Writer, model: &TrainedModel) {
        match model {
            TrainedModel::LinearSvc(m) => {
                w.u8(1);
                w.matrix(&m.weights);
                w.floats(&m.intercepts);
            }
            TrainedModel::Mlp(m) => {
                w.u8(2);
                w.u64(m.layers.len() as u64);
                for l in &m.layers {
                    w.matrix(&l.weights);
                    w.floats(l.bias.as_slice());
                }
            }
            TrainedModel::Forest(m) => {
                w.u8(3);
                w.u64(m.n_classes as u64);
                w.floats(&m.importances);
                w.u64(m.trees.len() as u64);
                for t in &m.trees {
                    w.u64(t.nodes.len() as u64);
                    for n in &t.nodes {
                        match *n {
                            forest::Node::Leaf { class } => {
                                w.u8(0);
                                w.u64(class as u64);
                            }
                            forest::Node::Split {
                                feature,
                                threshold,
                                left,
                                right,
                            } => {
                                w.u8(1);
                                w.u64(feature as u64);
                                w.f64(threshold);
                                w.u64(left as u64);
                                w.u64(right as u64);
                            }
                        }
                    }
                }
            }
            TrainedModel::Ridge(m) => {
                w.u8(4);
                w.floats(m.coef.as_slice());
                w.u8(m.rank_deficient as u8);
            }
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<TrainedModel> {
        let mut r = Reader::new(bytes);
        read_header(&mut r)?;
        let m = read_model(&mut r)?;
        if !r.finished() {
            return Err(Error::Decode("trailing bytes".into()));
        }
        Ok(m)
    }

    pub fn read_header(r: &mut Reader<'_>) -> Result<()> {
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Decode("bad magic".into()));
        }
        let v = r.u32()?;
        if v != VERSION {
            return Err(Error::Decode(format!("unsupported version {v}")));
        }
        Ok(())
    }

    pub fn read_model(r: &mut Reader<'_>) -> Result<TrainedModel> {
        Ok(match r.u8()? {
            1 => {
                let weights = r.matrix()?;
                let intercepts = r.floats()?;
                if intercepts.len() != weights.nrows() {
                    return Err(Error::Decode("intercept count".into()));
                }
                TrainedModel::LinearSvc(LinearSvc {
                    weights,
                    intercepts,
                    objective_history: Vec::new(),
                })
            }
            2 => {
                let n = r.len()?;
                let layers = (0..n)
                    .map(|_| {
                        Ok(Dense {
                            weights: r.matrix()?,
                            bias: DVector::from_vec(r.floats()?),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                TrainedModel::Mlp(Mlp::from_layers(layers).map_err(|e| Error::Decode(e.to_string()))?)
            }
            3 => {
                let n_classes = r.len()?;
                let importances = r.floats()?;
                let n_features = importances.len();
                let n_trees = r.len()?;
                let mut trees = Vec::with_capacity(n_trees);
                for _ in 0..n_trees {
                    let n_nodes = r.len()?;
                    let mut nodes = Vec::with_capacity(n_nodes);
                    for _ in 0..n_nodes {
                        let node = match r.u8()? {
                            0 => {
                                let class = r.len()?;
                                if class >= n_classes {
                                    return Err(Error::Decode("leaf class out of range".into()));
                                }
                                forest::Node::Leaf { class }
                            }
                            1 => forest::Node::Split {
                                feature: r.len()?,
                                threshold: r.f64()?,
                                left: r.len()?,
                                right: r.len()?,
                            },
                            t => return Err(Error::Decode(format!("node tag {t}"))),
                        };
                        nodes.push(node);
                    }
                    let ok = nodes.iter().all(|n| match *n {
                        forest::Node::Split {
                            feature, left, right, ..
                        } => left < n_nodes && right < n_nodes && feature < n_features,
                        _ => true,
                    });
                    if !ok || nodes.is_empty() {
                        return Err(Error::Decode("malformed tree".into()));
                    }
                    trees.push(forest::Tree { nodes });
                }
                TrainedModel::Forest(Forest {
                    trees,
                    n_classes,
                    n_features,
                    importances,
                })
            }
            4 => TrainedModel::Ridge(Ridge {
                coef: DVector::from_vec(r.floats()?),
                rank_deficient: r.u8()? != 0,
            }),
            t => return Err(Error::Decode(format!("unknown family tag {t}"))),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_break_lowest() {
        assert_eq!(argmax_lowest([0.0, 0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax_lowest([1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn single_class_rejected() {
        let x = Matrix::zeros(3, 2);
        let cfg = LearnerConfig::Svc(LinearSvcConfig::default());
        assert!(matches!(cfg.fit(&x, &[1, 1, 1], 2), Err(Error::SingleClass)));
        let cfg = LearnerConfig::Forest(ForestConfig::default());
        assert!(matches!(cfg.fit(&x, &[0, 0, 0], 2), Err(Error::SingleClass)));
    }

    #[test]
    fn blob_roundtrip_each_family() {
        let x = Matrix::from_fn(24, 3, |r, c| ((r * 5 + c * 7) % 11) as f64 / 3.0 + (r % 3) as f64);
        let y: Vec<usize> = (0..24).map(|r| r % 3).collect();
        let cfgs = [
            LearnerConfig::Svc(LinearSvcConfig::default()),
            LearnerConfig::Mlp(MlpConfig::default().with_hidden(5)),
            LearnerConfig::Forest(ForestConfig::default().with_trees(5)),
        ];
        for cfg in cfgs {
            let m = cfg.fit(&x, &y, 3).unwrap();
            let back = TrainedModel::from_bytes(&m.to_bytes()).unwrap();
            assert_eq!(m.predict(&x).unwrap(), back.predict(&x).unwrap());
            assert_eq!(m.decision_scores(&x).unwrap(), back.decision_scores(&x).unwrap());
        }
        let r = TrainedModel::Ridge(fit_ridge(&x, &[1.0; 24], &RidgeConfig::default()).unwrap());
        assert_eq!(TrainedModel::from_bytes(&r.to_bytes()).unwrap(), r);
        assert!(TrainedModel::from_bytes(b"ENSM\x01\x00\x00\x00\x09").is_err());
    }

    #[test]
    fn dimension_mismatch_reported() {
        let x = Matrix::from_fn(6, 2, |r, c| (r + c) as f64);
        let m = LearnerConfig::Svc(LinearSvcConfig::default())
            .fit(&x, &[0, 1, 0, 1, 0, 1], 2)
            .unwrap();
        assert!(matches!(
            m.predict(&Matrix::zeros(1, 3)),
            Err(Error::ShapeMismatch { expected: 2, found: 3 })
        ));
    }
}
