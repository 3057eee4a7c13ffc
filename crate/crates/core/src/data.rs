//! Cohorts of per-subject labeled feature matrices.
//!
//! A [`Cohort`] holds one [`SubjectDataset`] per subject, all sharing the same
//! [`LabelSpace`] and feature dimensionality. This module also owns the
//! on-disk cohort directory format, stratified train/test splitting, the
//! geometric training-size grid and nested stratified subsampling.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Dense real matrix, rows = samples.
pub type Matrix = DMatrix<f64>;

/// Magic bytes at the start of a binary feature file.
pub const FEATURE_MAGIC: &[u8; 4] = b"ENSB";
/// Binary feature file version.
pub const FEATURE_VERSION: u32 = 1;
/// Name of the manifest inside a cohort directory.
pub const MANIFEST_NAME: &str = "cohort.json";

/// Ordered class names and their integer encoding `0..K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    classes: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSpace {
    pub fn new<S: Into<String>>(classes: impl IntoIterator<Item = S>) -> Result<Self> {
        let classes: Vec<String> = classes.into_iter().map(Into::into).collect();
        if classes.len() < 2 {
            return Err(Error::invalid("a label space needs at least 2 classes"));
        }
        let mut index = HashMap::with_capacity(classes.len());
        for (i, c) in classes.iter().enumerate() {
            if index.insert(c.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate class name {c:?}")));
            }
        }
        Ok(Self { classes, index })
    }

    /// Label space `class_0 .. class_{k-1}`.
    pub fn numbered(k: usize) -> Result<Self> {
        Self::new((0..k).map(|i| format!("class_{i}")))
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn encode(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, label: usize) -> Option<&str> {
        self.classes.get(label).map(String::as_str)
    }
}

/// One subject's feature matrix and integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectDataset {
    id: String,
    features: Matrix,
    labels: Vec<usize>,
}

impl SubjectDataset {
    /// Validates labels against `n_classes` and rejects non-finite features.
    pub fn new(
        id: impl Into<String>,
        features: Matrix,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self> {
        let id = id.into();
        if features.nrows() == 0 {
            return Err(Error::Subject {
                subject: id,
                message: "no samples".into(),
            });
        }
        if features.nrows() != labels.len() {
            return Err(Error::Subject {
                subject: id,
                message: format!(
                    "{} feature rows but {} labels",
                    features.nrows(),
                    labels.len()
                ),
            });
        }
        if let Some(row) = labels.iter().position(|&l| l >= n_classes) {
            return Err(Error::UnknownLabel {
                subject: id,
                row,
                label: labels[row].to_string(),
            });
        }
        for r in 0..features.nrows() {
            if features.row(r).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { subject: id, row: r });
            }
        }
        Ok(Self {
            id,
            features,
            labels,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_counts(&self, n_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Feature rows at `indices`, in the given order.
    pub fn rows(&self, indices: &[usize]) -> Matrix {
        select_rows(&self.features, indices)
    }

    pub fn labels_at(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }
}

/// Copies the given rows of `m` into a new matrix.
pub fn select_rows(m: &Matrix, indices: &[usize]) -> Matrix {
    Matrix::from_fn(indices.len(), m.ncols(), |r, c| m[(indices[r], c)])
}

/// A set of subjects sharing one label space and feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    subjects: Vec<SubjectDataset>,
    label_space: LabelSpace,
    n_features: usize,
}

impl Cohort {
    pub fn new(subjects: Vec<SubjectDataset>, label_space: LabelSpace) -> Result<Self> {
        let first = subjects
            .first()
            .ok_or_else(|| Error::invalid("a cohort needs at least one subject"))?;
        let n_features = first.n_features();
        if n_features == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        let k = label_space.n_classes();
        let mut seen = HashMap::new();
        for s in &subjects {
            if s.n_features() != n_features {
                return Err(Error::DimensionMismatch {
                    subject: s.id.clone(),
                    expected: n_features,
                    found: s.n_features(),
                });
            }
            if let Some(row) = s.labels.iter().position(|&l| l >= k) {
                return Err(Error::UnknownLabel {
                    subject: s.id.clone(),
                    row,
                    label: s.labels[row].to_string(),
                });
            }
            if seen.insert(s.id.clone(), ()).is_some() {
                return Err(Error::invalid(format!("duplicate subject id {:?}", s.id)));
            }
        }
        Ok(Self {
            subjects,
            label_space,
            n_features,
        })
    }

    pub fn subjects(&self) -> &[SubjectDataset] {
        &self.subjects
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn n_classes(&self) -> usize {
        self.label_space.n_classes()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn subject_ids(&self) -> Vec<&str> {
        self.subjects.iter().map(|s| s.id()).collect()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.subjects.iter().position(|s| s.id == id)
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectDataset> {
        self.subjects.iter().find(|s| s.id == id)
    }

    /// Hex SHA-256 over class names, subject ids, labels and feature bits.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for c in self.label_space.classes() {
            h.update((c.len() as u64).to_le_bytes());
            h.update(c.as_bytes());
        }
        h.update((self.n_features as u64).to_le_bytes());
        for s in &self.subjects {
            h.update((s.id.len() as u64).to_le_bytes());
            h.update(s.id.as_bytes());
            h.update((s.n_rows() as u64).to_le_bytes());
            for &l in &s.labels {
                h.update((l as u64).to_le_bytes());
            }
            for r in 0..s.n_rows() {
                for v in s.features.row(r).iter() {
                    h.update(v.to_bits().to_le_bytes());
                }
            }
        }
        hex(&h.finalize())
    }

    /// Loads a cohort from a manifest file or a directory containing `cohort.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_cohort(path)
    }

    /// Writes the cohort directory format into `dir` (binary feature files).
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        save_cohort(self, dir)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    classes: Vec<String>,
    n_features: usize,
    subjects: Vec<ManifestSubject>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestSubject {
    id: String,
    features: String,
    labels: String,
}

/// Loads and validates a cohort directory.
///
/// `path` may name either the manifest itself or the directory holding
/// `cohort.json`. Feature files ending in `.csv` are parsed as headerless CSV;
/// anything else must be the `ENSB` binary format.
pub fn load_cohort(path: impl AsRef<Path>) -> Result<Cohort> {
    let path = path.as_ref();
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    };
    let base = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    let label_space = LabelSpace::new(manifest.classes.clone()).map_err(|e| Error::Manifest {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;

    let mut subjects = Vec::with_capacity(manifest.subjects.len());
    for entry in &manifest.subjects {
        let feature_path = base.join(&entry.features);
        let features = if has_extension(&feature_path, "csv") {
            read_csv_features(&feature_path, &entry.id)?
        } else {
            read_binary_features(&feature_path)?
        };
        if features.ncols() != manifest.n_features {
            return Err(Error::DimensionMismatch {
                subject: entry.id.clone(),
                expected: manifest.n_features,
                found: features.ncols(),
            });
        }
        for r in 0..features.nrows() {
            if features.row(r).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    subject: entry.id.clone(),
                    row: r,
                });
            }
        }
        let labels = read_labels(&base.join(&entry.labels), &entry.id, &label_space)?;
        if labels.len() != features.nrows() {
            return Err(Error::Subject {
                subject: entry.id.clone(),
                message: format!(
                    "{} feature rows but {} labels",
                    features.nrows(),
                    labels.len()
                ),
            });
        }
        subjects.push(SubjectDataset::new(
            entry.id.clone(),
            features,
            labels,
            label_space.n_classes(),
        )?);
    }
    if subjects.is_empty() {
        return Err(Error::Manifest {
            path: manifest_path,
            message: "no subjects listed".into(),
        });
    }
    Cohort::new(subjects, label_space)
}

/// Writes `cohort.json`, one `.ensb` feature file and one `.labels` file per subject.
///
/// Features are stored as float32, so values that are not exactly
/// representable in single precision are rounded.
pub fn save_cohort(cohort: &Cohort, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(cohort.n_subjects());
    for (i, s) in cohort.subjects().iter().enumerate() {
        let stem = format!("subject_{i:04}");
        let features = format!("{stem}.ensb");
        let labels = format!("{stem}.labels");
        write_binary_features(&dir.join(&features), s.features())?;
        let text: String = s
            .labels()
            .iter()
            .map(|&l| format!("{}\n", cohort.label_space().classes()[l]))
            .collect();
        write_atomic(&dir.join(&labels), text.as_bytes())?;
        entries.push(ManifestSubject {
            id: s.id().to_string(),
            features,
            labels,
        });
    }
    let manifest = Manifest {
        classes: cohort.label_space().classes().to_vec(),
        n_features: cohort.n_features(),
        subjects: entries,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&dir.join(MANIFEST_NAME), json.as_bytes())
}

fn has_extension(path: &Path, ext: &str) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    {
        let f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(f);
        w.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Encodes a matrix in the `ENSB` float32 row-major format.
pub fn encode_features(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 4 * m.len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for r in 0..m.nrows() {
        for v in m.row(r).iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> std::result::Result<Matrix, String> {
    if bytes.len() < 24 || &bytes[..4] != FEATURE_MAGIC {
        return Err("missing ENSB header".into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or("size overflow")?;
    let body = &bytes[24..];
    if body.len() != expected {
        return Err(format!(
            "expected {expected} payload bytes for {rows}x{cols}, found {}",
            body.len()
        ));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    Ok(Matrix::from_row_iterator(rows, cols, values))
}

fn write_binary_features(path: &Path, m: &Matrix) -> Result<()> {
    write_atomic(path, &encode_features(m))
}

fn read_binary_features(path: &Path) -> Result<Matrix> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_features(&bytes).map_err(|message| Error::Manifest {
        path: path.to_path_buf(),
        message,
    })
}

fn read_csv_features(path: &Path, subject: &str) -> Result<Matrix> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Subject {
                subject: subject.into(),
                message: format!("row {r}: {e}"),
            })?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Subject {
                    subject: subject.into(),
                    message: format!("row {r} has {} columns, expected {}", row.len(), first.len()),
                });
            }
        }
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    Ok(Matrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
}

fn read_labels(path: &Path, subject: &str, space: &LabelSpace) -> Result<Vec<usize>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (row, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let name = line.trim_end_matches('\r');
        let label = space.encode(name).ok_or_else(|| Error::UnknownLabel {
            subject: subject.into(),
            row,
            label: name.into(),
        })?;
        labels.push(label);
    }
    Ok(labels)
}

/// Disjoint train/test row indices for one subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
}

impl SplitPlan {
    /// True when none of `rows` is a test row.
    pub fn is_disjoint_from_test(&self, rows: &[usize]) -> bool {
        rows.iter().all(|r| self.test_indices.binary_search(r).is_err())
    }
}

fn indices_by_class(labels: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    by_class
}

fn n_classes_of(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |m| m + 1)
}

/// Per-class stratified train/test split.
///
/// The test set holds `ceil(n * test_fraction)` rows, at least one per class
/// and never the last sample of a class; per-class counts follow
/// largest-remainder rounding of `n_c * test_fraction`.
pub fn stratified_split(ds: &SubjectDataset, test_fraction: f64, seed: u64) -> Result<SplitPlan> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let by_class = indices_by_class(ds.labels(), n_classes_of(ds.labels()));
    for (class, idx) in by_class.iter().enumerate() {
        if !idx.is_empty() && idx.len() < 2 {
            return Err(Error::ClassTooSmall {
                class,
                count: idx.len(),
                required: 2,
            });
        }
    }
    let present: Vec<usize> = (0..by_class.len())
        .filter(|&c| !by_class[c].is_empty())
        .collect();
    let n = ds.n_rows();
    let target = (n as f64 * test_fraction).ceil() as usize;

    let mut quota = vec![0usize; by_class.len()];
    let mut remainders = Vec::new();
    for &c in &present {
        let exact = by_class[c].len() as f64 * test_fraction;
        let q = (exact.floor() as usize).clamp(1, by_class[c].len() - 1);
        quota[c] = q;
        remainders.push((exact - exact.floor(), c));
    }
    // largest remainder first, ties toward the lower class index
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut total: usize = quota.iter().sum();
    'fill: while total < target {
        let mut progressed = false;
        for &(_, c) in &remainders {
            if total >= target {
                break 'fill;
            }
            if quota[c] < by_class[c].len() - 1 {
                quota[c] += 1;
                total += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(n);
    let mut test = Vec::with_capacity(total);
    for &c in &present {
        let mut idx = by_class[c].clone();
        idx.shuffle(&mut rng);
        test.extend_from_slice(&idx[..quota[c]]);
        train.extend_from_slice(&idx[quota[c]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitPlan {
        train_indices: train,
        test_indices: test,
        seed,
    })
}

/// Geometrically spaced training-set sizes from `n_classes` to `n_train_max`.
pub fn geometric_train_grid(n_train_max: usize, n_classes: usize, n_points: usize) -> Result<Vec<usize>> {
    if n_classes == 0 || n_train_max < n_classes {
        return Err(Error::invalid(format!(
            "training split of {n_train_max} rows cannot cover {n_classes} classes"
        )));
    }
    if n_points < 2 {
        return Err(Error::invalid("grid needs at least 2 points"));
    }
    let s_min = n_classes as f64;
    let ratio = n_train_max as f64 / s_min;
    let mut sizes: Vec<usize> = (0..n_points)
        .map(|k| {
            let t = k as f64 / (n_points - 1) as f64;
            ((s_min * ratio.powf(t)).round() as usize).clamp(n_classes, n_train_max)
        })
        .collect();
    *sizes.last_mut().unwrap() = n_train_max;
    sizes.dedup();
    Ok(sizes)
}

/// Class-balanced subsample of the training split.
///
/// Classes receive samples round-robin in a seed-determined order and each
/// class draws from its own seed-determined permutation, so for a fixed seed
/// the subsample of a smaller size is contained in that of a larger size.
pub fn subsample_stratified(
    ds: &SubjectDataset,
    plan: &SplitPlan,
    size: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let n_train = plan.train_indices.len();
    if size > n_train {
        return Err(Error::invalid(format!(
            "subsample of {size} exceeds the {n_train}-row training split"
        )));
    }
    let train_labels: Vec<usize> = plan.train_indices.iter().map(|&i| ds.labels()[i]).collect();
    let mut by_class = indices_by_class(&train_labels, n_classes_of(ds.labels()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for idx in &mut by_class {
        idx.shuffle(&mut rng);
    }
    let mut order: Vec<usize> = (0..by_class.len()).filter(|&c| !by_class[c].is_empty()).collect();
    order.shuffle(&mut rng);

    let mut taken = vec![0usize; by_class.len()];
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        for &c in &order {
            if out.len() == size {
                break;
            }
            if taken[c] < by_class[c].len() {
                out.push(plan.train_indices[by_class[c][taken[c]]]);
                taken[c] += 1;
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}
