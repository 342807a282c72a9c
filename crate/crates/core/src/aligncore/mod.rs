//! Alignment math: inter-subject correlation, the label neighborhood
//! matrix, within/between-class cross-covariances and the pairwise solver.

mod covariance;
mod solver;

pub use covariance::{directed_cross, pair_covariances, PairCovariances};
pub use solver::{
    align_to_target, constraint_deviation, solve_pair, AlignmentMap, CrossTerm, SolverConfig, SolverMode,
};

use nalgebra::DMatrix;

use crate::datamodel::{standardize, LabelVector, SubjectData};
use crate::error::{Error, Result};

/// Inter-subject correlation `(1/V) · tr(Xᵢᵀ Xⱼ)` of two standardized subjects.
pub fn isc(xi: &SubjectData, xj: &SubjectData) -> Result<f64> {
    if !xi.is_standardized() || !xj.is_standardized() {
        return Err(Error::invalid("isc requires standardized subjects"));
    }
    isc_matrices(xi.x(), xj.x())
}

/// `(1/V) · tr(aᵀ b)` without any standardization check.
pub fn isc_matrices(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "isc shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.ncols() == 0 {
        return Err(Error::invalid("isc of matrices with no columns"));
    }
    Ok(a.dot(b) / a.ncols() as f64)
}

/// Standardizes both mapped matrices, then takes their ISC.
pub fn mapped_isc(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    isc_matrices(&standardize(a)?, &standardize(b)?)
}

/// Mean ISC over all unordered pairs of mapped matrices.
pub fn mean_pairwise_isc(mapped: &[DMatrix<f64>]) -> Result<f64> {
    if mapped.len() < 2 {
        return Err(Error::invalid("pairwise isc needs at least two subjects"));
    }
    let std: Vec<_> = mapped.iter().map(standardize).collect::<Result<_>>()?;
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..std.len() {
        for j in (i + 1)..std.len() {
            sum += isc_matrices(&std[i], &std[j])?;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// Binary `T × T` matrix marking time-point pairs that share a class.
///
/// The diagonal is one: a time point is its own neighbor, so all-distinct
/// labels give the identity and the classical same-time-point pairing.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodMatrix {
    alpha: DMatrix<f64>,
    eta: usize,
}

impl NeighborhoodMatrix {
    pub fn identity(t: usize) -> Self {
        NeighborhoodMatrix {
            alpha: DMatrix::identity(t, t),
            eta: t,
        }
    }

    pub fn alpha(&self) -> &DMatrix<f64> {
        &self.alpha
    }

    /// Number of one-entries in the full matrix, diagonal included.
    pub fn eta(&self) -> usize {
        self.eta
    }

    pub fn t(&self) -> usize {
        self.alpha.nrows()
    }

    /// The between-class weight `η / T²`.
    pub fn between_weight(&self) -> f64 {
        let t = self.t() as f64;
        self.eta as f64 / (t * t)
    }
}

pub fn build_alpha(labels: &LabelVector) -> NeighborhoodMatrix {
    let y = labels.as_slice();
    let t = y.len();
    let alpha = DMatrix::from_fn(t, t, |m, n| if y[m] == y[n] { 1.0 } else { 0.0 });
    let eta = labels.class_counts().iter().map(|c| c * c).sum();
    NeighborhoodMatrix { alpha, eta }
}
