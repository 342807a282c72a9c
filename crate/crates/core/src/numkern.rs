//! Dense kernels: symmetric eigendecomposition, SVD and the regularized
//! inverse square root used for whitening.
//!
//! The eigendecomposition comes from `nalgebra` and the SVD from `faer`;
//! nalgebra's SVD can return factors that do not reconstruct the input when
//! a singular value is exactly zero. This module adds ordering, a
//! deterministic sign convention and input validation on top.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// A square matrix that is symmetric by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Builds a symmetric matrix from `a`, replacing it by `(a + aᵀ) / 2`.
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::invalid(format!(
                "symmetric matrix must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        ensure_finite(&a, "symmetric matrix")?;
        let n = a.nrows();
        let mut s = a;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (s[(i, j)] + s[(j, i)]);
                s[(i, j)] = avg;
                s[(j, i)] = avg;
            }
        }
        Ok(SymMatrix(s))
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        SymMatrix::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

/// Eigenpairs sorted by descending eigenvalue.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors, one per column.
    pub vectors: DMatrix<f64>,
}

/// Thin SVD `a = u · diag(s) · vt` with `s` non-increasing.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub vt: DMatrix<f64>,
}

impl SvdResult {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (c, sv) in self.s.iter().enumerate() {
            us.column_mut(c).scale_mut(*sv);
        }
        us * &self.vt
    }
}

/// Regularized inverse square root together with the spectrum it came from.
#[derive(Debug, Clone)]
pub struct Whitening {
    pub inv_sqrt: SymMatrix,
    /// Eigenvalues of the input, descending, before the ridge shift.
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
    /// `true` where `eigenvalue + ridge` fell below the floor and was clamped.
    pub floored: Vec<bool>,
    pub ridge: f64,
    pub floor: f64,
}

impl Whitening {
    /// `V · diag(max(λ + ridge, floor)^(1/2)) · Vᵀ`, the inverse of `inv_sqrt`.
    pub fn sqrt(&self) -> DMatrix<f64> {
        let mut scaled = self.eigenvectors.clone();
        for (c, floored) in self.floored.iter().enumerate() {
            let lam = if *floored { self.floor } else { self.eigenvalues[c] + self.ridge };
            scaled.column_mut(c).scale_mut(lam.sqrt());
        }
        scaled * self.eigenvectors.transpose()
    }

    /// Orthogonal projector onto the span of the floored eigenvectors.
    pub fn floored_projector(&self) -> DMatrix<f64> {
        let n = self.eigenvectors.nrows();
        let mut p = DMatrix::zeros(n, n);
        for (c, _) in self.floored.iter().enumerate().filter(|(_, f)| **f) {
            let v = self.eigenvectors.column(c);
            p += &v * v.transpose();
        }
        p
    }
}

pub(crate) fn ensure_finite(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} has non-finite entries")))
    }
}

/// Flips each column so that its largest-magnitude entry is positive.
/// Returns the applied signs. Ties go to the lowest row index.
fn canonical_column_signs(m: &mut DMatrix<f64>) -> Vec<f64> {
    let mut signs = Vec::with_capacity(m.ncols());
    for mut col in m.column_iter_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for v in col.iter() {
            if v.abs() > best {
                best = v.abs();
                sign = if *v < 0.0 { -1.0 } else { 1.0 };
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
        signs.push(sign);
    }
    signs
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    // stable sort keeps the decomposition's order among exact ties
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    idx
}

pub fn sym_eig(a: &SymMatrix) -> Result<SymEig> {
    let m = a.as_matrix();
    ensure_finite(m, "eigen input")?;
    let n = m.nrows();
    if n == 0 {
        return Ok(SymEig {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
    let order = descending_order(eig.eigenvalues.as_slice());
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    canonical_column_signs(&mut vectors);
    Ok(SymEig { values, vectors })
}

/// `V · diag(g(λ)) · Vᵀ` with `g(λ) = max(λ + ridge, floor)^(-1/2)`.
pub fn inv_sqrt_psd(a: &SymMatrix, ridge: f64, floor: f64) -> Result<SymMatrix> {
    whitening(a, ridge, floor).map(|w| w.inv_sqrt)
}

pub fn whitening(a: &SymMatrix, ridge: f64, floor: f64) -> Result<Whitening> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::invalid(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(Error::invalid(format!("floor must be finite and > 0, got {floor}")));
    }
    let eig = sym_eig(a)?;
    let n = a.dim();
    let mut floored = Vec::with_capacity(n);
    let mut scaled = eig.vectors.clone();
    for c in 0..n {
        let shifted = eig.values[c] + ridge;
        let clamped = if shifted < floor {
            floored.push(true);
            floor
        } else {
            floored.push(false);
            shifted
        };
        scaled.column_mut(c).scale_mut(clamped.powf(-0.5));
    }
    let m = scaled * eig.vectors.transpose();
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("whitening produced non-finite entries".into()));
    }
    Ok(Whitening {
        inv_sqrt: SymMatrix::new(m)?,
        eigenvalues: eig.values,
        eigenvectors: eig.vectors,
        floored,
        ridge,
        floor,
    })
}

/// Thin SVD with descending singular values. Each left singular vector has
/// its largest-magnitude entry positive; the matching row of `vt` follows.
pub fn svd(a: &DMatrix<f64>) -> Result<SvdResult> {
    ensure_finite(a, "svd input")?;
    let (rows, cols) = a.shape();
    let r = rows.min(cols);
    if r == 0 {
        return Ok(SvdResult {
            u: DMatrix::zeros(rows, 0),
            s: DVector::zeros(0),
            vt: DMatrix::zeros(0, cols),
        });
    }
    let dec = faer::Mat::from_fn(rows, cols, |i, j| a[(i, j)])
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("svd did not converge: {e:?}")))?;
    let (u0, v0) = (dec.U(), dec.V());
    let s0: Vec<f64> = dec.S().column_vector().iter().copied().collect();
    let order = descending_order(&s0);
    let s = DVector::from_iterator(r, order.iter().map(|&i| s0[i].max(0.0)));
    let mut u = DMatrix::zeros(rows, r);
    let mut vt = DMatrix::zeros(r, cols);
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..rows {
            u[(i, dst)] = u0[(i, src)];
        }
        for j in 0..cols {
            vt[(dst, j)] = v0[(j, src)];
        }
    }
    let signs = canonical_column_signs(&mut u);
    for (row, sign) in signs.iter().enumerate() {
        if *sign < 0.0 {
            vt.row_mut(row).neg_mut();
        }
    }
    Ok(SvdResult { u, s, vt })
}
