//! Ensemble decoding by stacking.
//!
//! A [`BaseBank`] holds one linear SVC per source subject, each trained on
//! that subject's full data. Their predictions on a target subject become the
//! meta-features ([`StackedFeatures`]) of a final classifier trained on the
//! target's training rows only. [`conventional_decode`] is the
//! single-subject baseline the ensemble is compared against.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{write_atomic, Cohort, Matrix};
use crate::error::{Error, Result};
use crate::learners::codec::{self, Reader, Writer};
use crate::learners::{FeatureWeights, LearnerConfig, LinearSvcConfig, Penalty, TrainedModel};

/// How base predictions are turned into meta-features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StackEncoding {
    /// One-hot of each base model's predicted label.
    #[default]
    OneHotLabels,
    /// Raw per-class SVC margins.
    DecisionScores,
}

impl std::fmt::Display for StackEncoding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StackEncoding::OneHotLabels => "one-hot-labels",
            StackEncoding::DecisionScores => "decision-scores",
        })
    }
}

impl std::str::FromStr for StackEncoding {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one-hot-labels" | "one-hot" | "labels" => Ok(StackEncoding::OneHotLabels),
            "decision-scores" | "scores" => Ok(StackEncoding::DecisionScores),
            _ => Err(Error::Unknown {
                kind: "stack encoding",
                name: s.into(),
            }),
        }
    }
}

/// Per-feature centering and scaling estimated on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    /// Columns with (population) standard deviation below 1e-12 keep scale 1.
    pub fn fit(x: &Matrix) -> Self {
        let n = x.nrows().max(1) as f64;
        let (mean, scale) = x
            .column_iter()
            .map(|c| {
                let m = c.sum() / n;
                let var = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                let sd = var.sqrt();
                (m, if sd < 1e-12 { 1.0 } else { sd })
            })
            .unzip();
        Self { mean, scale }
    }

    pub fn transform(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.mean[j], self.scale[j]);
            col.apply(|v| *v = (*v - m) / s);
        }
        out
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }
}

/// A pre-trained per-subject model with the scaler fitted on that subject's data.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseModel {
    pub subject_id: String,
    pub scaler: Standardizer,
    pub model: TrainedModel,
}

impl BaseModel {
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        self.model.predict(&self.scaler.transform(x))
    }

    pub fn decision_scores(&self, x: &Matrix) -> Result<Matrix> {
        self.model.decision_scores(&self.scaler.transform(x))
    }
}

/// Pre-trained base models for one target subject, ordered by source subject.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseBank {
    target_id: String,
    penalty: Penalty,
    n_classes: usize,
    n_features: usize,
    models: Vec<BaseModel>,
    warnings: Vec<String>,
}

impl BaseBank {
    /// Assembles a bank from already fitted models (used for custom banks and tests).
    pub fn from_models(
        target_id: impl Into<String>,
        penalty: Penalty,
        n_classes: usize,
        n_features: usize,
        models: Vec<BaseModel>,
    ) -> Result<Self> {
        let target_id = target_id.into();
        if models.iter().any(|m| m.subject_id == target_id) {
            return Err(Error::invalid("a bank must not contain the target subject"));
        }
        if let Some(m) = models
            .iter()
            .find(|m| m.model.n_classes() != n_classes || m.model.n_features() != n_features)
        {
            return Err(Error::invalid(format!(
                "base model for {} does not match {n_classes} classes x {n_features} features",
                m.subject_id
            )));
        }
        Ok(Self {
            target_id,
            penalty,
            n_classes,
            n_features,
            models,
            warnings: Vec::new(),
        })
    }

    pub fn target_id(&self) -> &str {
        &self.target_id
    }

    pub fn penalty(&self) -> Penalty {
        self.penalty
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn models(&self) -> &[BaseModel] {
        &self.models
    }

    pub fn source_subject_ids(&self) -> Vec<&str> {
        self.models.iter().map(|m| m.subject_id.as_str()).collect()
    }

    /// Source subjects skipped during pre-training, with the reason.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Bank restricted to the models at `positions`, in that order.
    pub fn subset(&self, positions: &[usize]) -> Self {
        Self {
            models: positions.iter().map(|&i| self.models[i].clone()).collect(),
            warnings: Vec::new(),
            ..self.clone()
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.0.extend_from_slice(BANK_MAGIC);
        w.0.extend_from_slice(&codec::VERSION.to_le_bytes());
        w.str(&self.target_id);
        w.u8(matches!(self.penalty, Penalty::L1) as u8);
        w.u64(self.n_classes as u64);
        w.u64(self.n_features as u64);
        w.u64(self.warnings.len() as u64);
        self.warnings.iter().for_each(|s| w.str(s));
        w.u64(self.models.len() as u64);
        for m in &self.models {
            w.str(&m.subject_id);
            w.floats(&m.scaler.mean);
            w.floats(&m.scaler.scale);
            codec::write_model(&mut w, &m.model);
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != BANK_MAGIC {
            return Err(Error::Decode("bad bank magic".into()));
        }
        let v = r.u32()?;
        if v != codec::VERSION {
            return Err(Error::Decode(format!("unsupported bank version {v}")));
        }
        let target_id = r.str()?;
        let penalty = if r.u8()? == 1 { Penalty::L1 } else { Penalty::L2 };
        let n_classes = r.len()?;
        let n_features = r.len()?;
        let n_warn = r.len()?;
        let warnings = (0..n_warn).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let n = r.len()?;
        let mut models = Vec::with_capacity(n);
        for _ in 0..n {
            let subject_id = r.str()?;
            let mean = r.floats()?;
            let scale = r.floats()?;
            let model = codec::read_model(&mut r)?;
            models.push(BaseModel {
                subject_id,
                scaler: Standardizer { mean, scale },
                model,
            });
        }
        if !r.finished() {
            return Err(Error::Decode("trailing bytes in bank".into()));
        }
        let mut bank = Self::from_models(target_id, penalty, n_classes, n_features, models)
            .map_err(|e| Error::Decode(e.to_string()))?;
        bank.warnings = warnings;
        Ok(bank)
    }
}

const BANK_MAGIC: &[u8; 4] = b"ENSK";

/// Trains one l1- or l2-penalized linear SVC per non-target subject.
pub fn pretrain_bases(cohort: &Cohort, target_id: &str, penalty: Penalty) -> Result<BaseBank> {
    pretrain_bases_with(cohort, target_id, &LinearSvcConfig::default().with_penalty(penalty))
}

/// As [`pretrain_bases`] with an explicit SVC configuration.
///
/// Every source subject contributes all of its rows. Subjects whose labels
/// hold a single class are skipped and listed in [`BaseBank::warnings`].
pub fn pretrain_bases_with(cohort: &Cohort, target_id: &str, cfg: &LinearSvcConfig) -> Result<BaseBank> {
    if cohort.n_subjects() < 2 {
        return Err(Error::invalid("stacking needs at least 2 subjects"));
    }
    if cohort.position(target_id).is_none() {
        return Err(Error::Unknown {
            kind: "subject",
            name: target_id.into(),
        });
    }
    let k = cohort.n_classes();
    let fitted: Vec<Result<std::result::Result<BaseModel, String>>> = cohort
        .subjects()
        .par_iter()
        .filter(|s| s.id() != target_id)
        .map(|s| {
            let scaler = Standardizer::fit(s.features());
            let x = scaler.transform(s.features());
            match crate::learners::fit_linear_svc(&x, s.labels(), k, cfg) {
                Ok(m) => Ok(Ok(BaseModel {
                    subject_id: s.id().to_string(),
                    scaler,
                    model: TrainedModel::LinearSvc(m),
                })),
                Err(Error::SingleClass) => Ok(Err(format!(
                    "subject {} skipped: labels contain a single class",
                    s.id()
                ))),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut models = Vec::new();
    let mut warnings = Vec::new();
    for f in fitted {
        match f? {
            Ok(m) => models.push(m),
            Err(w) => {
                warn!("{w}");
                warnings.push(w);
            }
        }
    }
    if models.is_empty() {
        return Err(Error::invalid("no usable source subject for the bank"));
    }
    let mut bank = BaseBank::from_models(target_id, cfg.penalty, k, cohort.n_features(), models)?;
    bank.warnings = warnings;
    Ok(bank)
}

/// Meta-feature matrix: one K-wide column block per base model.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedFeatures {
    matrix: Matrix,
    n_classes: usize,
    source_ids: Vec<String>,
    encoding: StackEncoding,
}

impl StackedFeatures {
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn source_ids(&self) -> &[String] {
        &self.source_ids
    }

    pub fn encoding(&self) -> StackEncoding {
        self.encoding
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    /// Rows at `indices`.
    pub fn rows(&self, indices: &[usize]) -> Self {
        Self {
            matrix: crate::data::select_rows(&self.matrix, indices),
            ..self.clone()
        }
    }

    /// Keeps only the column blocks of the given base positions, in that order.
    pub fn blocks(&self, positions: &[usize]) -> Self {
        let k = self.n_classes;
        let m = Matrix::from_fn(self.matrix.nrows(), positions.len() * k, |r, c| {
            self.matrix[(r, positions[c / k] * k + c % k)]
        });
        Self {
            matrix: m,
            source_ids: positions.iter().map(|&i| self.source_ids[i].clone()).collect(),
            ..self.clone()
        }
    }
}

/// Evaluates every base model on `x_target` and lays their outputs side by side.
///
/// Decision-score mode requires linear SVC bases.
pub fn stack_features(bank: &BaseBank, x_target: &Matrix, enc: StackEncoding) -> Result<StackedFeatures> {
    if x_target.ncols() != bank.n_features {
        return Err(Error::ShapeMismatch {
            expected: bank.n_features,
            found: x_target.ncols(),
        });
    }
    if enc == StackEncoding::DecisionScores {
        if let Some(m) = bank
            .models
            .iter()
            .find(|m| !matches!(m.model, TrainedModel::LinearSvc(_)))
        {
            return Err(Error::UnsupportedFamily {
                family: m.model.family_name(),
                operation: "decision-score stacking (bases must be linear SVC)",
            });
        }
    }
    let k = bank.n_classes;
    let blocks: Vec<Matrix> = bank
        .models
        .par_iter()
        .map(|m| -> Result<Matrix> {
            match enc {
                StackEncoding::OneHotLabels => {
                    let pred = m.predict(x_target)?;
                    Ok(Matrix::from_fn(x_target.nrows(), k, |r, c| (pred[r] == c) as u8 as f64))
                }
                StackEncoding::DecisionScores => m.decision_scores(x_target),
            }
        })
        .collect::<Result<_>>()?;
    let mut matrix = Matrix::zeros(x_target.nrows(), k * blocks.len());
    for (i, b) in blocks.iter().enumerate() {
        matrix.view_mut((0, i * k), (b.nrows(), k)).copy_from(b);
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite meta-feature"));
    }
    Ok(StackedFeatures {
        matrix,
        n_classes: k,
        source_ids: bank.source_subject_ids().into_iter().map(String::from).collect(),
        encoding: enc,
    })
}

/// Trains the final classifier on the target's stacked training rows.
pub fn fit_ensemble(stacked: &StackedFeatures, y_train: &[usize], meta_cfg: &LearnerConfig) -> Result<TrainedModel> {
    if stacked.n_rows() != y_train.len() {
        return Err(Error::invalid(format!(
            "{} stacked rows but {} labels",
            stacked.n_rows(),
            y_train.len()
        )));
    }
    if stacked.source_ids.is_empty() {
        return Err(Error::invalid("empty base bank"));
    }
    meta_cfg.fit(&stacked.matrix, y_train, stacked.n_classes)
}

/// Single-subject baseline: standardize on the training rows, fit, predict the test rows.
pub fn conventional_decode(
    x_train: &Matrix,
    y_train: &[usize],
    x_test: &Matrix,
    n_classes: usize,
    meta_cfg: &LearnerConfig,
) -> Result<Vec<usize>> {
    let scaler = Standardizer::fit(x_train);
    let model = meta_cfg.fit(&scaler.transform(x_train), y_train, n_classes)?;
    model.predict(&scaler.transform(x_test))
}

/// Aggregate importance of each source subject in a fitted meta-model.
///
/// For a linear meta-SVC this is the sum of absolute weights over the
/// subject's column block; for a forest, the sum of the block's importances.
pub fn subject_importances(meta: &TrainedModel, bank: &BaseBank) -> Result<Vec<(String, f64)>> {
    if bank.is_empty() {
        return Err(Error::invalid("empty base bank"));
    }
    let k = bank.n_classes;
    let expected = k * bank.len();
    let per_column: Vec<f64> = match meta.feature_weights()? {
        FeatureWeights::Linear(w) => w.column_iter().map(|c| c.abs().sum()).collect(),
        FeatureWeights::Importance(v) => v,
    };
    if per_column.len() != expected {
        return Err(Error::ShapeMismatch {
            expected,
            found: per_column.len(),
        });
    }
    Ok(bank
        .models
        .iter()
        .enumerate()
        .map(|(i, m)| (m.subject_id.clone(), per_column[i * k..(i + 1) * k].iter().sum()))
        .collect())
}

/// On-disk cache of base banks keyed by (cohort hash, target, penalty).
#[derive(Debug, Clone)]
pub struct BankCache {
    root: PathBuf,
}

impl BankCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, cohort_hash: &str, target_id: &str, penalty: Penalty) -> PathBuf {
        let safe: String = target_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        let key = crate::seed::hash_str(target_id);
        self.root
            .join(&cohort_hash[..cohort_hash.len().min(16)])
            .join(format!("{safe}-{key:016x}-{penalty}.bank"))
    }

    /// Loads the bank when cached, otherwise trains and stores it. The flag is true on a hit.
    pub fn get_or_train(&self, cohort: &Cohort, cohort_hash: &str, target_id: &str, cfg: &LinearSvcConfig) -> Result<(BaseBank, bool)> {
        let path = self.path_for(cohort_hash, target_id, cfg.penalty);
        if let Ok(bytes) = fs::read(&path) {
            match BaseBank::from_bytes(&bytes) {
                Ok(bank) if bank.target_id == target_id => return Ok((bank, true)),
                Ok(_) | Err(_) => warn!("ignoring unreadable bank cache entry {}", path.display()),
            }
        }
        let bank = pretrain_bases_with(cohort, target_id, cfg)?;
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_atomic(&path, &bank.to_bytes())?;
        Ok((bank, false))
    }
}
