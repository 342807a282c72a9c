//! Functional alignment of multi-subject response matrices.
//!
//! Two solvers share one code path: classical hyperalignment (pairwise CCA
//! solved by whitening and SVD) and local discriminant hyperalignment, which
//! replaces the cross-covariance with a label-aware within/between-class
//! contrast. Around them sit the multi-subject trainer, a leave-one-subject-out
//! classification harness and a seeded synthetic data generator.

pub mod aligncore;
pub mod datamodel;
pub mod error;
pub mod experiment;
pub mod mvpeval;
pub mod numkern;
pub mod trainer;

pub use error::{Error, Result};
