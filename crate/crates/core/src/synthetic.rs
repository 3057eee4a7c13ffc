//! Synthetic multi-subject cohorts with shared class structure and
//! per-subject covariate shift.
//!
//! Every subject sees the same orthogonal class means, mixed by a subject
//! specific rotation `R_i`. The rotation walks the geodesic from the identity
//! (`subject_shift = 0`) to a random rotation (`subject_shift = 1`), so
//! within-subject separability is unchanged while cross-subject transfer
//! degrades as the shift grows.
//!
//! `R_i` acts on the first `min(n_features, 2·n_classes)` coordinates, the
//! subspace holding the class means, and is the identity elsewhere.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Cohort, LabelSpace, Matrix, SubjectDataset};
use crate::error::{Error, Result};
use crate::seed;

/// Parameters of a synthetic cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_subjects: usize,
    pub n_samples_per_subject: usize,
    pub n_features: usize,
    pub n_classes: usize,
    /// Euclidean distance between any two shared class means.
    pub class_separation: f64,
    /// 0 = identical subjects, 1 = fully random per-subject rotation.
    pub subject_shift: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Class-mean distance of the standard benchmark and the presets.
pub const DEFAULT_SEPARATION: f64 = 5.5;
/// Noise level of the standard benchmark and the presets.
pub const DEFAULT_NOISE: f64 = 1.0;
/// Feature dimension of the presets.
pub const DEFAULT_FEATURES: usize = 256;

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_subjects: 14,
            n_samples_per_subject: 120,
            n_features: DEFAULT_FEATURES,
            n_classes: 4,
            class_separation: DEFAULT_SEPARATION,
            subject_shift: 0.6,
            noise_sigma: DEFAULT_NOISE,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// The benchmark cohort used by the scarce-data and subject-count checks:
    /// 14 subjects, 120 samples each, 4 classes, shift 0.6.
    pub fn standard_benchmark() -> Self {
        Self::default()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("synthetic spec: {m}")));
        if self.n_subjects < 1 {
            return bad("n_subjects must be at least 1");
        }
        if self.n_classes < 2 {
            return bad("n_classes must be at least 2");
        }
        if self.n_samples_per_subject < self.n_classes {
            return bad("n_samples_per_subject must be at least n_classes");
        }
        if self.n_features < self.n_classes {
            return bad("n_features must be at least n_classes");
        }
        if !(self.class_separation >= 0.0 && self.class_separation.is_finite()) {
            return bad("class_separation must be a nonnegative number");
        }
        if !(0.0..=1.0).contains(&self.subject_shift) {
            return bad("subject_shift must lie in [0, 1]");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be a nonnegative number");
        }
        Ok(())
    }
}

/// Dataset shapes the presets mirror: (samples per subject, subjects, classes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Neuromod,
    Aomic,
    Forrest,
    Bold5000,
    RsvpIbc,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Neuromod,
        Preset::Aomic,
        Preset::Forrest,
        Preset::Bold5000,
        Preset::RsvpIbc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Neuromod => "neuromod",
            Preset::Aomic => "aomic",
            Preset::Forrest => "forrest",
            Preset::Bold5000 => "bold5000",
            Preset::RsvpIbc => "rsvp-ibc",
        }
    }

    /// (samples per subject, subjects, classes)
    pub fn shape(self) -> (usize, usize, usize) {
        match self {
            Preset::Neuromod => (50, 4, 4),
            Preset::Aomic => (61, 203, 4),
            Preset::Forrest => (175, 10, 5),
            Preset::Bold5000 => (332, 3, 4),
            Preset::RsvpIbc => (360, 13, 6),
        }
    }

    pub fn spec(self) -> SyntheticSpec {
        let (n_samples, n_subjects, n_classes) = self.shape();
        SyntheticSpec {
            n_subjects,
            n_samples_per_subject: n_samples,
            n_classes,
            ..SyntheticSpec::default()
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == key || (key == "rsvpibc" && *p == Preset::RsvpIbc))
            .ok_or_else(|| Error::Unknown {
                kind: "preset",
                name: s.to_string(),
            })
    }
}

/// Spec for a named dataset shape; remaining fields take the defaults.
pub fn table1_preset(name: &str) -> Result<SyntheticSpec> {
    Ok(name.parse::<Preset>()?.spec())
}

/// A rotation `U · blockdiag(rot(t·θ_j)) · Uᵀ` on a geodesic from the identity.
#[derive(Debug, Clone)]
pub struct InterpolatedRotation {
    basis: DMatrix<f64>,
    angles: Vec<f64>,
}

impl InterpolatedRotation {
    /// Draws a Haar-distributed basis and plane angles uniform in (-π, π],
    /// then scales the angles by `shift`.
    pub fn sample<R: Rng + ?Sized>(dim: usize, shift: f64, rng: &mut R) -> Self {
        let gaussian = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.sample(StandardNormal));
        let qr = gaussian.qr();
        let mut basis = qr.q();
        let r = qr.r();
        for j in 0..dim {
            if r[(j, j)] < 0.0 {
                basis.column_mut(j).neg_mut();
            }
        }
        let angles = (0..dim / 2)
            .map(|_| shift * rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
            .collect();
        Self { basis, angles }
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.angles.iter().all(|&a| a == 0.0) {
            return v.clone();
        }
        let mut coords = self.basis.tr_mul(v);
        for (j, &theta) in self.angles.iter().enumerate() {
            let (s, c) = theta.sin_cos();
            let (a, b) = (coords[2 * j], coords[2 * j + 1]);
            coords[2 * j] = c * a - s * b;
            coords[2 * j + 1] = s * a + c * b;
        }
        &self.basis * coords
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for c in 0..n {
            let e = DVector::from_fn(n, |r, _| if r == c { 1.0 } else { 0.0 });
            m.set_column(c, &self.apply(&e));
        }
        m
    }
}

/// Dimension of the subspace a subject rotation acts on.
pub fn mixing_dim(n_features: usize, n_classes: usize) -> usize {
    (2 * n_classes).min(n_features)
}

/// Shared class means: scaled standard basis vectors, pairwise distance `separation`.
pub fn class_means(n_features: usize, n_classes: usize, separation: f64) -> Vec<DVector<f64>> {
    let scale = separation / std::f64::consts::SQRT_2;
    (0..n_classes)
        .map(|k| DVector::from_fn(n_features, |r, _| if r == k { scale } else { 0.0 }))
        .collect()
}

/// Generates a cohort; identical specs give bit-identical cohorts.
///
/// Feature values are rounded to float32 precision so that saving to the
/// binary cohort format is lossless.
pub fn generate_cohort(spec: &SyntheticSpec) -> Result<Cohort> {
    spec.validate()?;
    let k = spec.n_classes;
    let means = class_means(spec.n_features, k, spec.class_separation);
    let subjects = (0..spec.n_subjects)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(spec.seed, &[i as u64]));
            let d = mixing_dim(spec.n_features, k);
            let rot = InterpolatedRotation::sample(d, spec.subject_shift, &mut rng);
            let subject_means: Vec<DVector<f64>> = means
                .iter()
                .map(|m| {
                    let mut out = m.clone();
                    out.rows_mut(0, d).copy_from(&rot.apply(&m.rows(0, d).into_owned()));
                    out
                })
                .collect();
            let n = spec.n_samples_per_subject;
            let labels: Vec<usize> = (0..n).map(|r| r % k).collect();
            let mut x = Matrix::zeros(n, spec.n_features);
            for r in 0..n {
                let mu = &subject_means[labels[r]];
                for c in 0..spec.n_features {
                    let z: f64 = rng.sample(StandardNormal);
                    x[(r, c)] = ((mu[c] + spec.noise_sigma * z) as f32) as f64;
                }
            }
            SubjectDataset::new(format!("sub-{:03}", i + 1), x, labels, k)
        })
        .collect::<Result<Vec<_>>>()?;
    Cohort::new(subjects, LabelSpace::numbered(k)?)
}
