//! Subject matrices, label vectors and datasets.
//!
//! A subject is a `T × V` matrix (time points by voxels). All subjects in a
//! dataset share `T` and `V`, and row `t` of every subject refers to the same
//! stimulus.

mod io;
mod synthetic;

pub use io::{load_dataset, read_csv_matrix, read_labels, read_matrix, save_dataset, write_labels, write_matrix, Manifest, ManifestSubject, MATRIX_MAGIC};
pub use synthetic::{generate_synthetic, generate_synthetic_raw, SyntheticSpec};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkern::ensure_finite;

/// Centered column norms at or below this (relative to the column's largest
/// absolute raw value, or 1) are treated as constant columns.
pub const ZERO_COLUMN_TOL: f64 = 1e-10;

const STANDARDIZED_CHECK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectData {
    subject_id: String,
    x: DMatrix<f64>,
    standardized: bool,
}

impl SubjectData {
    /// Wraps a matrix. When `standardized` is claimed it is verified.
    pub fn new(subject_id: impl Into<String>, x: DMatrix<f64>, standardized: bool) -> Result<Self> {
        ensure_finite(&x, "subject matrix")?;
        if standardized && !is_standardized(&x, STANDARDIZED_CHECK_TOL) {
            return Err(Error::invalid("matrix flagged standardized has columns that are not zero-mean/unit-norm"));
        }
        Ok(SubjectData {
            subject_id: subject_id.into(),
            x,
            standardized,
        })
    }

    /// Standardizes `x` column-wise and wraps it.
    pub fn standardized(subject_id: impl Into<String>, x: &DMatrix<f64>) -> Result<Self> {
        let z = standardize(x)?;
        Ok(SubjectData {
            subject_id: subject_id.into(),
            x: z,
            standardized: true,
        })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.x
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub fn t(&self) -> usize {
        self.x.nrows()
    }

    pub fn v(&self) -> usize {
        self.x.ncols()
    }

    /// Returns a standardized copy, or a clone if already standardized.
    pub fn to_standardized(&self) -> Result<Self> {
        if self.standardized {
            Ok(self.clone())
        } else {
            SubjectData::standardized(self.subject_id.clone(), &self.x)
        }
    }
}

/// Zero-mean, unit Euclidean norm columns. Constant columns become zero.
pub fn standardize(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() < 2 {
        return Err(Error::invalid(format!("standardization needs at least 2 time points, got {}", x.nrows())));
    }
    ensure_finite(x, "subject matrix")?;
    let t = x.nrows() as f64;
    let mut z = x.clone();
    for mut col in z.column_iter_mut() {
        let scale = col.amax().max(1.0);
        let mean = col.sum() / t;
        col.add_scalar_mut(-mean);
        let norm = col.norm();
        if norm <= ZERO_COLUMN_TOL * scale {
            col.fill(0.0);
        } else {
            col.unscale_mut(norm);
        }
    }
    Ok(z)
}

/// `true` when every column is centered and has unit or zero norm, within `tol`.
pub fn is_standardized(x: &DMatrix<f64>, tol: f64) -> bool {
    x.column_iter().all(|col| {
        let norm = col.norm();
        let mean = col.sum() / col.len().max(1) as f64;
        mean.abs() <= tol && (norm <= tol || (norm - 1.0).abs() <= tol)
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    y: Vec<usize>,
    num_classes: usize,
}

impl LabelVector {
    pub fn new(y: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::invalid("num_classes must be positive"));
        }
        let mut seen = vec![false; num_classes];
        for &c in &y {
            if c >= num_classes {
                return Err(Error::invalid(format!("class id {c} out of range for {num_classes} classes")));
            }
            seen[c] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("class {missing} never appears in the labels")));
        }
        Ok(LabelVector { y, num_classes })
    }

    /// Infers `num_classes` as `max + 1`.
    pub fn from_labels(y: Vec<usize>) -> Result<Self> {
        let n = y.iter().copied().max().map(|m| m + 1).unwrap_or(0);
        LabelVector::new(y, n)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &c in &self.y {
            counts[c] += 1;
        }
        counts
    }

    /// Keeps the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        LabelVector::new(rows.iter().map(|&r| self.y[r]).collect(), self.num_classes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    subjects: Vec<SubjectData>,
    labels: Option<LabelVector>,
    t: usize,
    v: usize,
}

impl LabeledDataset {
    pub fn new(subjects: Vec<SubjectData>, labels: Option<LabelVector>) -> Result<Self> {
        let first = subjects
            .first()
            .ok_or_else(|| Error::schema("dataset has no subjects"))?;
        let (t, v) = (first.t(), first.v());
        for s in &subjects {
            if s.t() != t || s.v() != v {
                return Err(Error::schema(format!(
                    "subject {} is {}x{}, expected {}x{}",
                    s.subject_id(),
                    s.t(),
                    s.v(),
                    t,
                    v
                )));
            }
        }
        if let Some(l) = &labels {
            if l.len() != t {
                return Err(Error::schema(format!("label vector has length {}, expected T = {}", l.len(), t)));
            }
        }
        Ok(LabeledDataset { subjects, labels, t, v })
    }

    pub fn subjects(&self) -> &[SubjectData] {
        &self.subjects
    }

    pub fn labels(&self) -> Option<&LabelVector> {
        self.labels.as_ref()
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn v(&self) -> usize {
        self.v
    }

    pub fn num_subjects(&self) -> usize {
        self.subjects.len()
    }

    /// Standardizes every subject that is not already standardized.
    pub fn standardized(&self) -> Result<Self> {
        let subjects = self
            .subjects
            .iter()
            .map(SubjectData::to_standardized)
            .collect::<Result<Vec<_>>>()?;
        LabeledDataset::new(subjects, self.labels.clone())
    }

    /// Splits into the remaining subjects (labels kept) and the held-out one.
    pub fn split_out(&self, held_out: usize) -> Result<(LabeledDataset, SubjectData)> {
        if held_out >= self.subjects.len() {
            return Err(Error::invalid(format!("subject index {held_out} out of range")));
        }
        let rest = self
            .subjects
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != held_out)
            .map(|(_, s)| s.clone())
            .collect();
        Ok((
            LabeledDataset::new(rest, self.labels.clone())?,
            self.subjects[held_out].clone(),
        ))
    }

    /// Voxels ordered by the variance over time of their across-subject
    /// mean, highest first. Labels are not used.
    pub fn rank_voxels(&self) -> Vec<usize> {
        let s = self.subjects.len() as f64;
        let t = self.t as f64;
        let scores: Vec<f64> = (0..self.v)
            .map(|n| {
                let mean_col: Vec<f64> = (0..self.t)
                    .map(|m| self.subjects.iter().map(|x| x.x()[(m, n)]).sum::<f64>() / s)
                    .collect();
                let mu = mean_col.iter().sum::<f64>() / t;
                mean_col.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / t
            })
            .collect();
        let mut order: Vec<usize> = (0..self.v).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        order
    }

    /// Keeps the given rows and columns of every subject and re-standardizes.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Result<Self> {
        if rows.iter().any(|&r| r >= self.t) || cols.iter().any(|&c| c >= self.v) {
            return Err(Error::invalid("row/column selection out of range"));
        }
        let subjects = self
            .subjects
            .iter()
            .map(|s| {
                let m = DMatrix::from_fn(rows.len(), cols.len(), |i, j| s.x()[(rows[i], cols[j])]);
                SubjectData::standardized(s.subject_id(), &m)
            })
            .collect::<Result<Vec<_>>>()?;
        let labels = match &self.labels {
            Some(l) => Some(l.select_rows(rows)?),
            None => None,
        };
        LabeledDataset::new(subjects, labels)
    }
}
