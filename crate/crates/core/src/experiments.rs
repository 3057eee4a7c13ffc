//! Evaluation protocol: training-size sweeps, subject-count sweeps, balanced
//! accuracy, ensemble-minus-conventional gains and percentile bootstrap
//! intervals.
//!
//! Each target subject gets a fixed 10% stratified test split per CV
//! repetition; the training part is subsampled along a geometric grid and the
//! same test rows score every grid size. Bases are pre-trained once per target
//! on full source data and reused across splits, sizes and meta families.
//! Every cell draws its seeds from the master seed through the cell key, so
//! the report does not depend on the thread schedule.

use std::collections::BTreeMap;
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{geometric_train_grid, hex, stratified_split, subsample_stratified, Cohort, SplitPlan};
use crate::error::{Error, Result};
use crate::learners::{Family, ForestConfig, LearnerConfig, LinearSvcConfig, MlpConfig, Penalty};
use crate::seed::{derive, hash_str};
use crate::stacking::{
    conventional_decode, fit_ensemble, stack_features, BankCache, BaseBank, StackEncoding, StackedFeatures,
};

/// Decoding approach of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approach {
    Conventional,
    Ensemble,
}

impl std::fmt::Display for Approach {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Approach::Conventional => "conventional",
            Approach::Ensemble => "ensemble",
        })
    }
}

impl std::str::FromStr for Approach {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "conventional" => Ok(Approach::Conventional),
            "ensemble" => Ok(Approach::Ensemble),
            _ => Err(Error::Unknown {
                kind: "approach",
                name: s.into(),
            }),
        }
    }
}

/// Everything a sweep needs besides the cohort. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub approaches: Vec<Approach>,
    pub meta_families: Vec<Family>,
    pub base_penalty: Penalty,
    /// Inverse regularization of the base SVCs.
    pub base_c: f64,
    /// CV repetitions (fresh test split each).
    pub n_cv: usize,
    pub grid_points: usize,
    pub test_fraction: f64,
    /// Ensemble sizes for the subject sweep.
    pub subject_subset_sizes: Vec<usize>,
    pub encoding: StackEncoding,
    pub bootstrap_iterations: usize,
    pub confidence_level: f64,
    pub master_seed: u64,
    /// Restrict to these target subjects; all subjects when absent.
    pub targets: Option<Vec<String>>,
    pub svc: LinearSvcConfig,
    pub mlp: MlpConfig,
    pub forest: ForestConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            approaches: vec![Approach::Conventional, Approach::Ensemble],
            meta_families: vec![Family::Svc, Family::Mlp, Family::Forest],
            base_penalty: Penalty::L2,
            base_c: 1.0,
            n_cv: 20,
            grid_points: 10,
            test_fraction: 0.1,
            subject_subset_sizes: Vec::new(),
            encoding: StackEncoding::OneHotLabels,
            bootstrap_iterations: 1000,
            confidence_level: 0.95,
            master_seed: 0,
            targets: None,
            svc: LinearSvcConfig::default(),
            mlp: MlpConfig::default(),
            forest: ForestConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Size-sweep protocol: 20 CV splits.
    pub fn size_sweep() -> Self {
        Self::default()
    }

    /// Subject-sweep protocol: 5 CV splits over the given ensemble sizes.
    pub fn subject_sweep(sizes: Vec<usize>) -> Self {
        Self {
            n_cv: 5,
            subject_subset_sizes: sizes,
            ..Self::default()
        }
    }

    pub fn with_families(mut self, families: &[Family]) -> Self {
        self.meta_families = families.to_vec();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn meta_config(&self, family: Family) -> LearnerConfig {
        match family {
            Family::Svc => LearnerConfig::Svc(self.svc.clone()),
            Family::Mlp => LearnerConfig::Mlp(self.mlp.clone()),
            Family::Forest => LearnerConfig::Forest(self.forest.clone()),
        }
    }

    pub fn base_config(&self) -> LinearSvcConfig {
        LinearSvcConfig {
            penalty: self.base_penalty,
            c: self.base_c,
            ..LinearSvcConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_cv < 1 {
            return bad("n_cv must be at least 1".into());
        }
        if self.approaches.is_empty() || self.meta_families.is_empty() {
            return bad("at least one approach and one meta family are required".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction {} outside (0, 1)", self.test_fraction));
        }
        if self.grid_points < 2 {
            return bad("grid_points must be at least 2".into());
        }
        if self.bootstrap_iterations < 100 {
            return bad("bootstrap_iterations must be at least 100".into());
        }
        if !(self.confidence_level > 0.0 && self.confidence_level < 1.0) {
            return bad("confidence_level outside (0, 1)".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }
}

/// One evaluated cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub target: String,
    pub split: usize,
    pub grid_index: usize,
    pub train_size: usize,
    /// `floor(train_size / K)`.
    pub samples_per_class: usize,
    /// Ensemble size of the cell; conventional records carry the size of the ensemble they pair with.
    pub n_subjects_in_ensemble: usize,
    pub meta_family: Family,
    pub approach: Approach,
    /// `None` when the cell failed.
    pub balanced_accuracy: Option<f64>,
    pub failure: Option<String>,
    pub n_test: usize,
    /// Fit rows were disjoint from the test rows and the target was absent from the bank.
    pub leakage_free: bool,
}

/// Mean and bootstrap interval of the accuracies in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub approach: Approach,
    pub meta_family: Family,
    pub n_subjects_in_ensemble: usize,
    /// `None` aggregates every training size.
    pub train_size: Option<usize>,
    pub samples_per_class: Option<usize>,
    pub n: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Paired ensemble-minus-conventional gain, in percentage points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSummary {
    pub meta_family: Family,
    pub n_subjects_in_ensemble: usize,
    pub train_size: Option<usize>,
    pub samples_per_class: Option<usize>,
    pub n: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Run facts that vary between otherwise identical runs; excluded from the content hash.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub wall_time_secs: f64,
    pub bank_cache_hits: usize,
    pub bank_cache_misses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    /// `size-sweep` or `subject-sweep`.
    pub kind: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub cohort_hash: String,
    pub n_subjects: usize,
    pub n_classes: usize,
    pub targets: Vec<String>,
    pub encoding: StackEncoding,
    pub bootstrap_unit: String,
    pub weighting: String,
    /// Train/test sizes and grid per (target, split).
    pub splits: Vec<SplitInfo>,
    /// Subject subsets used per (target, ensemble size, split), subject sweeps only.
    pub subsets: Vec<SubsetInfo>,
    pub bank_warnings: Vec<String>,
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub target: String,
    pub split: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub grid: Vec<usize>,
    /// Base models were trained on every row of each source subject.
    pub bases_on_full_source_data: bool,
    pub n_bases: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetInfo {
    pub target: String,
    pub ensemble_size: usize,
    pub split: usize,
    pub subjects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub metadata: ReportMetadata,
    pub run_info: RunInfo,
    pub records: Vec<RunRecord>,
    pub summaries: Vec<Summary>,
    pub gains: Vec<GainSummary>,
}

impl ExperimentReport {
    /// Hex SHA-256 over everything except `run_info` and the hash itself.
    pub fn compute_content_hash(&self) -> String {
        let mut meta = self.metadata.clone();
        meta.content_hash.clear();
        let payload = serde_json::to_vec(&(&meta, &self.records, &self.summaries, &self.gains))
            .expect("report serializes");
        hex(&Sha256::digest(&payload))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("report: {e}")))
    }

    /// One CSV row per record.
    pub fn records_csv(&self) -> String {
        let mut out = String::from(
            "target,split,grid_index,train_size,samples_per_class,n_subjects_in_ensemble,meta_family,approach,balanced_accuracy,n_test,leakage_free,failure\n",
        );
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                csv_field(&r.target),
                r.split,
                r.grid_index,
                r.train_size,
                r.samples_per_class,
                r.n_subjects_in_ensemble,
                r.meta_family,
                r.approach,
                r.balanced_accuracy.map(|v| format!("{v}")).unwrap_or_default(),
                r.n_test,
                r.leakage_free,
                csv_field(r.failure.as_deref().unwrap_or("")),
            ));
        }
        out
    }

    pub fn summaries_csv(&self) -> String {
        let mut out = String::from(
            "approach,meta_family,n_subjects_in_ensemble,train_size,samples_per_class,n,mean,ci_low,ci_high\n",
        );
        for s in &self.summaries {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                s.approach,
                s.meta_family,
                s.n_subjects_in_ensemble,
                opt(s.train_size),
                opt(s.samples_per_class),
                s.n,
                s.mean,
                s.ci_low,
                s.ci_high
            ));
        }
        out
    }

    pub fn gains_csv(&self) -> String {
        let mut out =
            String::from("meta_family,n_subjects_in_ensemble,train_size,samples_per_class,n,mean,ci_low,ci_high\n");
        for g in &self.gains {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                g.meta_family,
                g.n_subjects_in_ensemble,
                opt(g.train_size),
                opt(g.samples_per_class),
                g.n,
                g.mean,
                g.ci_low,
                g.ci_high
            ));
        }
        out
    }

    /// Records that evaluated successfully.
    pub fn scored(&self) -> impl Iterator<Item = (&RunRecord, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.balanced_accuracy.map(|a| (r, a)))
    }
}

fn opt(v: Option<usize>) -> String {
    v.map_or_else(|| "all".to_string(), |v| v.to_string())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Mean recall over the classes present in `y_true`.
pub fn balanced_accuracy(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<f64> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(Error::invalid(format!(
            "balanced accuracy needs equal non-empty inputs, got {} and {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut total = vec![0usize; n_classes];
    let mut hit = vec![0usize; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= n_classes {
            return Err(Error::invalid(format!("label {t} outside 0..{n_classes}")));
        }
        total[t] += 1;
        if t == p {
            hit[t] += 1;
        }
    }
    let (sum, present) = total
        .iter()
        .zip(&hit)
        .filter(|(&n, _)| n > 0)
        .fold((0.0, 0usize), |(s, c), (&n, &h)| (s + h as f64 / n as f64, c + 1));
    Ok(sum / present as f64)
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// Percentile bootstrap interval of the mean.
///
/// Resamples `values` with replacement `iterations` times and returns the
/// `(1-level)/2` and `(1+level)/2` percentiles of the resampled means. A single
/// value yields the degenerate interval `(v, v)`.
pub fn bootstrap_ci(values: &[f64], iterations: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    match values.len() {
        0 => return Err(Error::invalid("bootstrap of an empty sample")),
        1 => {
            warn!("bootstrap of a single value; returning a degenerate interval");
            return Ok((values[0], values[0]));
        }
        _ => {}
    }
    if iterations < 100 {
        return Err(Error::invalid("bootstrap needs at least 100 iterations"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("confidence level {level} outside (0, 1)")));
    }
    let n = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..iterations)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((percentile_sorted(&means, alpha), percentile_sorted(&means, 1.0 - alpha)))
}

/// Selects records for [`gain`]; `None` fields match anything.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellSelector {
    pub meta_family: Option<Family>,
    pub n_subjects_in_ensemble: Option<usize>,
    pub train_size: Option<usize>,
    pub samples_per_class: Option<usize>,
    pub grid_index: Option<usize>,
}

impl CellSelector {
    pub fn family(family: Family) -> Self {
        Self {
            meta_family: Some(family),
            ..Self::default()
        }
    }

    pub fn matches(&self, r: &RunRecord) -> bool {
        self.meta_family.is_none_or(|f| f == r.meta_family)
            && self.n_subjects_in_ensemble.is_none_or(|n| n == r.n_subjects_in_ensemble)
            && self.train_size.is_none_or(|n| n == r.train_size)
            && self.samples_per_class.is_none_or(|n| n == r.samples_per_class)
            && self.grid_index.is_none_or(|n| n == r.grid_index)
    }
}

/// Mean accuracy of approach `a` minus that of `b` over the selected cells, in percentage points.
pub fn gain_between(report: &ExperimentReport, selector: &CellSelector, a: Approach, b: Approach) -> Result<f64> {
    let mean_of = |approach: Approach| -> Result<f64> {
        let v: Vec<f64> = report
            .scored()
            .filter(|(r, _)| r.approach == approach && selector.matches(r))
            .map(|(_, acc)| acc)
            .collect();
        if v.is_empty() {
            return Err(Error::invalid(format!("no {approach} records for the selected cells")));
        }
        Ok(v.iter().sum::<f64>() / v.len() as f64)
    };
    Ok(100.0 * (mean_of(a)? - mean_of(b)?))
}

/// Ensemble minus conventional mean accuracy, in percentage points.
pub fn gain(report: &ExperimentReport, selector: &CellSelector) -> Result<f64> {
    gain_between(report, selector, Approach::Ensemble, Approach::Conventional)
}

/// Paired per-(target, split) gains in percentage points for the selected cells.
pub fn paired_gains(report: &ExperimentReport, selector: &CellSelector) -> Vec<f64> {
    type Key<'a> = (&'a str, usize, usize, Family, usize);
    let mut conv: BTreeMap<Key<'_>, f64> = BTreeMap::new();
    let mut ens: BTreeMap<Key<'_>, f64> = BTreeMap::new();
    for (r, acc) in report.scored().filter(|(r, _)| selector.matches(r)) {
        let key = (r.target.as_str(), r.split, r.train_size, r.meta_family, r.n_subjects_in_ensemble);
        match r.approach {
            Approach::Conventional => conv.insert(key, acc),
            Approach::Ensemble => ens.insert(key, acc),
        };
    }
    ens.iter()
        .filter_map(|(k, e)| conv.get(k).map(|c| 100.0 * (e - c)))
        .collect()
}

/// Bootstrap interval of the paired gains of the selected cells.
pub fn gain_ci(report: &ExperimentReport, selector: &CellSelector, iterations: usize, seed: u64) -> Result<(f64, f64, f64)> {
    let diffs = paired_gains(report, selector);
    if diffs.is_empty() {
        return Err(Error::invalid("no paired records for the selected cells"));
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let (lo, hi) = bootstrap_ci(&diffs, iterations, report.metadata.config.confidence_level, seed)?;
    Ok((mean, lo, hi))
}

/// A sweep over one cohort, optionally reusing cached base banks.
pub struct Experiment<'a> {
    cohort: &'a Cohort,
    cfg: ExperimentConfig,
    cache: Option<BankCache>,
}

const TAG_SPLIT: u64 = 1;
const TAG_SUBSAMPLE: u64 = 2;
const TAG_FIT: u64 = 3;
const TAG_SUBSET: u64 = 4;
const TAG_BOOT: u64 = 5;

struct TargetContext {
    target: String,
    bank: BaseBank,
    stacked: StackedFeatures,
}

struct Cell<'c> {
    ctx: &'c TargetContext,
    plan: &'c SplitPlan,
    split: usize,
    grid_index: usize,
    rows: &'c [usize],
}

impl<'a> Experiment<'a> {
    pub fn new(cohort: &'a Cohort, cfg: ExperimentConfig) -> Self {
        Self {
            cohort,
            cfg,
            cache: None,
        }
    }

    pub fn with_cache(mut self, cache: BankCache) -> Self {
        self.cache = Some(cache);
        self
    }

    fn targets(&self) -> Result<Vec<String>> {
        match &self.cfg.targets {
            None => Ok(self.cohort.subject_ids().into_iter().map(String::from).collect()),
            Some(list) => {
                for t in list {
                    if self.cohort.position(t).is_none() {
                        return Err(Error::Unknown {
                            kind: "target subject",
                            name: t.clone(),
                        });
                    }
                }
                Ok(list.clone())
            }
        }
    }

    fn wants(&self, a: Approach) -> bool {
        self.cfg.approaches.contains(&a)
    }

    fn prepare(&self, target: &str, cohort_hash: &str, info: &mut RunInfo) -> Result<TargetContext> {
        let base_cfg = self.cfg.base_config();
        let bank = match &self.cache {
            Some(cache) => {
                let (bank, hit) = cache.get_or_train(self.cohort, cohort_hash, target, &base_cfg)?;
                if hit {
                    info.bank_cache_hits += 1;
                } else {
                    info.bank_cache_misses += 1;
                }
                bank
            }
            None => crate::stacking::pretrain_bases_with(self.cohort, target, &base_cfg)?,
        };
        let ds = self.cohort.subject(target).expect("target validated");
        // base outputs on every target row; no target label is read here
        let stacked = stack_features(&bank, ds.features(), self.cfg.encoding)?;
        Ok(TargetContext {
            target: target.to_string(),
            bank,
            stacked,
        })
    }

    fn split_for(&self, target: &str, split: usize) -> Result<SplitPlan> {
        let ds = self.cohort.subject(target).expect("target validated");
        stratified_split(
            ds,
            self.cfg.test_fraction,
            derive(self.cfg.master_seed, &[hash_str(target), split as u64, TAG_SPLIT]),
        )
    }

    fn fit_seed(&self, target: &str, split: usize, grid_index: usize, family: Family, extra: u64) -> u64 {
        derive(
            self.cfg.master_seed,
            &[hash_str(target), split as u64, grid_index as u64, family as u64, extra, TAG_FIT],
        )
    }

    fn conventional_cell(&self, cell: &Cell<'_>, family: Family, n_ens: usize) -> RunRecord {
        let ds = self.cohort.subject(&cell.ctx.target).unwrap();
        let k = self.cohort.n_classes();
        let cfg = self
            .cfg
            .meta_config(family)
            .reseeded(self.fit_seed(&cell.ctx.target, cell.split, cell.grid_index, family, 0));
        let y_test = ds.labels_at(&cell.plan.test_indices);
        let outcome = conventional_decode(
            &ds.rows(cell.rows),
            &ds.labels_at(cell.rows),
            &ds.rows(&cell.plan.test_indices),
            k,
            &cfg,
        )
        .and_then(|pred| balanced_accuracy(&y_test, &pred, k));
        self.record(cell, family, Approach::Conventional, n_ens, outcome, true)
    }

    fn ensemble_cell(&self, cell: &Cell<'_>, family: Family, stacked: &StackedFeatures, bank_excludes_target: bool, subset_key: u64) -> RunRecord {
        let ds = self.cohort.subject(&cell.ctx.target).unwrap();
        let k = self.cohort.n_classes();
        let cfg = self.cfg.meta_config(family).reseeded(self.fit_seed(
            &cell.ctx.target,
            cell.split,
            cell.grid_index,
            family,
            subset_key,
        ));
        let y_test = ds.labels_at(&cell.plan.test_indices);
        let outcome = fit_ensemble(&stacked.rows(cell.rows), &ds.labels_at(cell.rows), &cfg)
            .and_then(|meta| meta.predict(stacked.rows(&cell.plan.test_indices).matrix()))
            .and_then(|pred| balanced_accuracy(&y_test, &pred, k));
        let n_ens = stacked.source_ids().len();
        self.record(cell, family, Approach::Ensemble, n_ens, outcome, bank_excludes_target)
    }

    fn record(&self, cell: &Cell<'_>, family: Family, approach: Approach, n_ens: usize, outcome: Result<f64>, bank_ok: bool) -> RunRecord {
        let (acc, failure) = match outcome {
            Ok(a) => (Some(a), None),
            Err(e) => (None, Some(e.to_string())),
        };
        RunRecord {
            target: cell.ctx.target.clone(),
            split: cell.split,
            grid_index: cell.grid_index,
            train_size: cell.rows.len(),
            samples_per_class: cell.rows.len() / self.cohort.n_classes(),
            n_subjects_in_ensemble: n_ens,
            meta_family: family,
            approach,
            balanced_accuracy: acc,
            failure,
            n_test: cell.plan.test_indices.len(),
            leakage_free: bank_ok && cell.plan.is_disjoint_from_test(cell.rows),
        }
    }

    fn split_info(&self, ctx: &TargetContext, split: usize, plan: &SplitPlan, grid: &[usize]) -> SplitInfo {
        SplitInfo {
            target: ctx.target.clone(),
            split,
            n_train: plan.train_indices.len(),
            n_test: plan.test_indices.len(),
            grid: grid.to_vec(),
            bases_on_full_source_data: ctx.bank.models().iter().all(|m| {
                self.cohort
                    .subject(&m.subject_id)
                    .is_some_and(|s| m.scaler.mean().len() == s.n_features())
            }),
            n_bases: ctx.bank.len(),
        }
    }

    /// Every target × CV split × grid size × meta family × approach.
    pub fn run_size_sweep(&self) -> Result<ExperimentReport> {
        self.cfg.validate()?;
        let start = Instant::now();
        let cohort_hash = self.cohort.content_hash();
        let mut info = RunInfo::default();
        let mut records = Vec::new();
        let mut splits = Vec::new();
        let mut warnings = Vec::new();
        let targets = self.targets()?;
        for target in &targets {
            let ctx = self.prepare(target, &cohort_hash, &mut info)?;
            warnings.extend(ctx.bank.warnings().iter().cloned());
            let bank_ok = !ctx.bank.source_subject_ids().contains(&target.as_str());
            let per_split: Vec<Result<(SplitInfo, Vec<RunRecord>)>> = (0..self.cfg.n_cv)
                .into_par_iter()
                .map(|split| {
                    let ds = self.cohort.subject(target).unwrap();
                    let plan = self.split_for(target, split)?;
                    let grid = geometric_train_grid(plan.train_indices.len(), self.cohort.n_classes(), self.cfg.grid_points)?;
                    let sub_seed = derive(self.cfg.master_seed, &[hash_str(target), split as u64, TAG_SUBSAMPLE]);
                    let mut out = Vec::new();
                    for (gi, &size) in grid.iter().enumerate() {
                        let rows = subsample_stratified(ds, &plan, size, sub_seed)?;
                        let cell = Cell {
                            ctx: &ctx,
                            plan: &plan,
                            split,
                            grid_index: gi,
                            rows: &rows,
                        };
                        for &family in &self.cfg.meta_families {
                            if self.wants(Approach::Conventional) {
                                out.push(self.conventional_cell(&cell, family, ctx.bank.len()));
                            }
                            if self.wants(Approach::Ensemble) {
                                out.push(self.ensemble_cell(&cell, family, &ctx.stacked, bank_ok, 0));
                            }
                        }
                    }
                    Ok((self.split_info(&ctx, split, &plan, &grid), out))
                })
                .collect();
            for r in per_split {
                let (si, recs) = r?;
                splits.push(si);
                records.extend(recs);
            }
            info!("size sweep: target {target} done");
        }
        self.finish("size-sweep", cohort_hash, targets, splits, Vec::new(), warnings, records, info, start)
    }

    /// Like the size sweep, for each ensemble size in `subject_subset_sizes`,
    /// with a different random subset of source subjects per CV split when
    /// enough distinct subsets exist.
    pub fn run_subject_sweep(&self) -> Result<ExperimentReport> {
        self.cfg.validate()?;
        if self.cfg.subject_subset_sizes.is_empty() {
            return Err(Error::Config("subject sweep needs subject_subset_sizes".into()));
        }
        let start = Instant::now();
        let cohort_hash = self.cohort.content_hash();
        let mut info = RunInfo::default();
        let mut records = Vec::new();
        let mut splits = Vec::new();
        let mut subsets_meta = Vec::new();
        let mut warnings = Vec::new();
        let targets = self.targets()?;
        for target in &targets {
            let ctx = self.prepare(target, &cohort_hash, &mut info)?;
            warnings.extend(ctx.bank.warnings().iter().cloned());
            let n_src = ctx.bank.len();
            if let Some(&bad) = self.cfg.subject_subset_sizes.iter().find(|&&m| m == 0 || m > n_src) {
                return Err(Error::Config(format!(
                    "ensemble size {bad} outside 1..={n_src} for target {target}"
                )));
            }
            let bank_ok = !ctx.bank.source_subject_ids().contains(&target.as_str());
            let subsets: Vec<Vec<Vec<usize>>> = self
                .cfg
                .subject_subset_sizes
                .iter()
                .map(|&m| {
                    let seed = derive(self.cfg.master_seed, &[hash_str(target), m as u64, TAG_SUBSET]);
                    draw_subsets(n_src, m, self.cfg.n_cv, seed)
                })
                .collect();
            for (mi, &m) in self.cfg.subject_subset_sizes.iter().enumerate() {
                for (split, positions) in subsets[mi].iter().enumerate() {
                    subsets_meta.push(SubsetInfo {
                        target: target.clone(),
                        ensemble_size: m,
                        split,
                        subjects: positions
                            .iter()
                            .map(|&p| ctx.bank.models()[p].subject_id.clone())
                            .collect(),
                    });
                }
            }
            let per_split: Vec<Result<(SplitInfo, Vec<RunRecord>)>> = (0..self.cfg.n_cv)
                .into_par_iter()
                .map(|split| {
                    let ds = self.cohort.subject(target).unwrap();
                    let plan = self.split_for(target, split)?;
                    let grid = geometric_train_grid(plan.train_indices.len(), self.cohort.n_classes(), self.cfg.grid_points)?;
                    let sub_seed = derive(self.cfg.master_seed, &[hash_str(target), split as u64, TAG_SUBSAMPLE]);
                    let stacked_per_size: Vec<StackedFeatures> = subsets
                        .iter()
                        .map(|s| ctx.stacked.blocks(&s[split]))
                        .collect();
                    let mut out = Vec::new();
                    for (gi, &size) in grid.iter().enumerate() {
                        let rows = subsample_stratified(ds, &plan, size, sub_seed)?;
                        let cell = Cell {
                            ctx: &ctx,
                            plan: &plan,
                            split,
                            grid_index: gi,
                            rows: &rows,
                        };
                        for &family in &self.cfg.meta_families {
                            // the baseline ignores the subset, so fit it once and pair it with every size
                            let conv = self
                                .wants(Approach::Conventional)
                                .then(|| self.conventional_cell(&cell, family, 0));
                            for (mi, &m) in self.cfg.subject_subset_sizes.iter().enumerate() {
                                if let Some(c) = &conv {
                                    out.push(RunRecord {
                                        n_subjects_in_ensemble: m,
                                        ..c.clone()
                                    });
                                }
                                if self.wants(Approach::Ensemble) {
                                    out.push(self.ensemble_cell(&cell, family, &stacked_per_size[mi], bank_ok, m as u64));
                                }
                            }
                        }
                    }
                    Ok((self.split_info(&ctx, split, &plan, &grid), out))
                })
                .collect();
            for r in per_split {
                let (si, recs) = r?;
                splits.push(si);
                records.extend(recs);
            }
            info!("subject sweep: target {target} done");
        }
        self.finish("subject-sweep", cohort_hash, targets, splits, subsets_meta, warnings, records, info, start)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        kind: &str,
        cohort_hash: String,
        targets: Vec<String>,
        splits: Vec<SplitInfo>,
        subsets: Vec<SubsetInfo>,
        bank_warnings: Vec<String>,
        records: Vec<RunRecord>,
        mut info: RunInfo,
        start: Instant,
    ) -> Result<ExperimentReport> {
        let summaries = summarize(&records, &self.cfg)?;
        let gains = summarize_gains(&records, &self.cfg)?;
        let mut report = ExperimentReport {
            metadata: ReportMetadata {
                kind: kind.into(),
                config: self.cfg.clone(),
                config_hash: self.cfg.hash(),
                cohort_hash,
                n_subjects: self.cohort.n_subjects(),
                n_classes: self.cohort.n_classes(),
                targets,
                encoding: self.cfg.encoding,
                bootstrap_unit: "per (target subject, CV split) accuracy within a cell".into(),
                weighting: "uniform per record".into(),
                splits,
                subsets,
                bank_warnings,
                content_hash: String::new(),
            },
            run_info: RunInfo::default(),
            records,
            summaries,
            gains,
        };
        report.metadata.content_hash = report.compute_content_hash();
        info.wall_time_secs = start.elapsed().as_secs_f64();
        report.run_info = info;
        Ok(report)
    }
}

/// `count` subsets of size `m` from `0..n`; distinct whenever `C(n, m) >= count`.
fn draw_subsets(n: usize, m: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // once every distinct subset has been used, repetition restarts
    let n_distinct = n_choose_k_capped(n, m, count);
    let mut out: Vec<Vec<usize>> = Vec::with_capacity(count);
    let mut round_start = 0;
    let mut all: Vec<usize> = (0..n).collect();
    while out.len() < count {
        if out.len() - round_start == n_distinct {
            round_start = out.len();
        }
        all.shuffle(&mut rng);
        let mut s = all[..m].to_vec();
        s.sort_unstable();
        if out[round_start..].contains(&s) {
            continue;
        }
        out.push(s);
    }
    out
}

/// `C(n, k)`, or `cap` when the coefficient is at least `cap`.
fn n_choose_k_capped(n: usize, k: usize, cap: usize) -> usize {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
        if c >= cap as u128 {
            return cap;
        }
    }
    (c as usize).min(cap)
}

fn summarize(records: &[RunRecord], cfg: &ExperimentConfig) -> Result<Vec<Summary>> {
    type Key = (Approach, Family, usize, Option<usize>);
    let mut groups: BTreeMap<Key, (Vec<f64>, Option<usize>)> = BTreeMap::new();
    for r in records {
        let Some(acc) = r.balanced_accuracy else { continue };
        for size in [Some(r.train_size), None] {
            let e = groups
                .entry((r.approach, r.meta_family, r.n_subjects_in_ensemble, size))
                .or_insert_with(|| (Vec::new(), size.map(|_| r.samples_per_class)));
            e.0.push(acc);
        }
    }
    groups
        .into_iter()
        .map(|((approach, family, n_ens, size), (values, spc))| {
            let key = format!("acc/{approach}/{family}/{n_ens}/{size:?}");
            let (lo, hi) = bootstrap_ci(
                &values,
                cfg.bootstrap_iterations,
                cfg.confidence_level,
                derive(cfg.master_seed, &[hash_str(&key), TAG_BOOT]),
            )?;
            Ok(Summary {
                approach,
                meta_family: family,
                n_subjects_in_ensemble: n_ens,
                train_size: size,
                samples_per_class: spc,
                n: values.len(),
                mean: values.iter().sum::<f64>() / values.len() as f64,
                ci_low: lo,
                ci_high: hi,
            })
        })
        .collect()
}

fn summarize_gains(records: &[RunRecord], cfg: &ExperimentConfig) -> Result<Vec<GainSummary>> {
    type Pair = (String, usize, usize, Family, usize);
    let mut conv: BTreeMap<Pair, f64> = BTreeMap::new();
    for r in records.iter().filter(|r| r.approach == Approach::Conventional) {
        if let Some(a) = r.balanced_accuracy {
            conv.insert((r.target.clone(), r.split, r.train_size, r.meta_family, r.n_subjects_in_ensemble), a);
        }
    }
    type Key = (Family, usize, Option<usize>);
    let mut groups: BTreeMap<Key, (Vec<f64>, Option<usize>)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.approach == Approach::Ensemble) {
        let Some(e) = r.balanced_accuracy else { continue };
        let Some(c) = conv.get(&(r.target.clone(), r.split, r.train_size, r.meta_family, r.n_subjects_in_ensemble)) else {
            continue;
        };
        for size in [Some(r.train_size), None] {
            let g = groups
                .entry((r.meta_family, r.n_subjects_in_ensemble, size))
                .or_insert_with(|| (Vec::new(), size.map(|_| r.samples_per_class)));
            g.0.push(100.0 * (e - c));
        }
    }
    groups
        .into_iter()
        .map(|((family, n_ens, size), (values, spc))| {
            let key = format!("gain/{family}/{n_ens}/{size:?}");
            let (lo, hi) = bootstrap_ci(
                &values,
                cfg.bootstrap_iterations,
                cfg.confidence_level,
                derive(cfg.master_seed, &[hash_str(&key), TAG_BOOT]),
            )?;
            Ok(GainSummary {
                meta_family: family,
                n_subjects_in_ensemble: n_ens,
                train_size: size,
                samples_per_class: spc,
                n: values.len(),
                mean: values.iter().sum::<f64>() / values.len() as f64,
                ci_low: lo,
                ci_high: hi,
            })
        })
        .collect()
}

/// Size sweep without a bank cache.
pub fn run_size_sweep(cohort: &Cohort, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    Experiment::new(cohort, cfg.clone()).run_size_sweep()
}

/// Subject sweep without a bank cache.
pub fn run_subject_sweep(cohort: &Cohort, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    Experiment::new(cohort, cfg.clone()).run_subject_sweep()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_accuracy_cases() {
        assert_eq!(balanced_accuracy(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap(), 0.75);
        assert_eq!(balanced_accuracy(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&[0, 1, 2, 3], &[2; 4], 4).unwrap(), 0.25);
        // class 2 absent from y_true is ignored
        assert_eq!(balanced_accuracy(&[0, 0, 1], &[0, 2, 1], 3).unwrap(), 0.75);
        assert!(balanced_accuracy(&[], &[], 2).is_err());
    }

    #[test]
    fn bootstrap_constant_and_deterministic() {
        let (lo, hi) = bootstrap_ci(&[0.7; 10], 500, 0.95, 1).unwrap();
        assert!((lo - 0.7).abs() < 1e-12 && (hi - 0.7).abs() < 1e-12);
        let v: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        assert_eq!(bootstrap_ci(&v, 500, 0.95, 4).unwrap(), bootstrap_ci(&v, 500, 0.95, 4).unwrap());
        assert_eq!(bootstrap_ci(&[2.5], 500, 0.95, 4).unwrap(), (2.5, 2.5));
        assert!(bootstrap_ci(&[], 500, 0.95, 4).is_err());
    }

    #[test]
    fn subsets_distinct_when_possible() {
        let s = draw_subsets(13, 1, 5, 3);
        let mut uniq = s.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 5);
        let full = draw_subsets(13, 13, 5, 3);
        assert!(full.iter().all(|v| v == &(0..13).collect::<Vec<_>>()));
        // C(3, 2) = 3 < 5: every pair appears before any repeats
        let few = draw_subsets(3, 2, 5, 1);
        assert_eq!(few.len(), 5);
        let mut first = few[..3].to_vec();
        first.sort();
        assert_eq!(first, vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile_sorted(&[0.0, 1.0, 2.0, 3.0], 0.5), 1.5);
        assert_eq!(percentile_sorted(&[0.0, 10.0], 0.025), 0.25);
    }
}
