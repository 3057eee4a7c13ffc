//! Across-subject ensemble decoding by stacking.
//!
//! One linear classifier is pre-trained per source subject; a final
//! classifier is then trained on the stacked predictions those models make
//! on a target subject's data. The crate also provides the conventional
//! single-subject baseline, the evaluation harness (training-size and
//! subject-count sweeps, balanced accuracy, bootstrap intervals), the ridge
//! bias-variance formulas with a Monte-Carlo check, and a synthetic cohort
//! generator.

pub mod cli;
pub mod data;
pub mod error;
pub mod experiments;
pub mod learners;
pub mod seed;
pub mod stacking;
pub mod synthetic;
pub mod theory;

pub use error::{Error, Result};
