use nalgebra::DMatrix;

use super::NeighborhoodMatrix;
use crate::error::{Error, Result};

/// Within-class `w`, between-class `b` and discriminant `c_tilde` covariances
/// of one subject pair, all `V × V`.
#[derive(Debug, Clone)]
pub struct PairCovariances {
    pub w: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c_tilde: DMatrix<f64>,
    /// The weight applied to `b` in `c_tilde`.
    pub between_weight: f64,
}

fn check_shapes(xi: &DMatrix<f64>, xj: &DMatrix<f64>, alpha: &NeighborhoodMatrix) -> Result<()> {
    if xi.nrows() != xj.nrows() {
        return Err(Error::invalid(format!("time points differ: {} vs {}", xi.nrows(), xj.nrows())));
    }
    if alpha.t() != xi.nrows() {
        return Err(Error::invalid(format!(
            "neighborhood matrix is {0}x{0}, data has T = {1}",
            alpha.t(),
            xi.nrows()
        )));
    }
    Ok(())
}

/// `M = Xᵢᵀ α Xⱼ` and `N = Xᵢᵀ (J − α) Xⱼ`, the latter via column sums:
/// `Xᵢᵀ J Xⱼ = sᵢ sⱼᵀ`.
fn within_between(xi: &DMatrix<f64>, xj: &DMatrix<f64>, alpha: &NeighborhoodMatrix) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = xi.transpose() * (alpha.alpha() * xj);
    let si = xi.row_sum().transpose();
    let sj = xj.row_sum();
    let n = si * sj - &m;
    (m, n)
}

/// Symmetrized within/between-class covariances.
///
/// `W = M + Mᵀ` and `B = N + Nᵀ`, so both subjects must have the same
/// number of columns. `weight` overrides the default `η / T²`.
pub fn pair_covariances(
    xi: &DMatrix<f64>,
    xj: &DMatrix<f64>,
    alpha: &NeighborhoodMatrix,
    weight: Option<f64>,
) -> Result<PairCovariances> {
    check_shapes(xi, xj, alpha)?;
    if xi.ncols() != xj.ncols() {
        return Err(Error::invalid(format!(
            "symmetrized covariances need equal widths, got {} and {}",
            xi.ncols(),
            xj.ncols()
        )));
    }
    let between_weight = weight.unwrap_or_else(|| alpha.between_weight());
    let (m, n) = within_between(xi, xj, alpha);
    let w = &m + m.transpose();
    let b = &n + n.transpose();
    let c_tilde = &w - &b * between_weight;
    Ok(PairCovariances {
        w,
        b,
        c_tilde,
        between_weight,
    })
}

/// The `Vᵢ × Vⱼ` discriminant cross-covariance `M − weight · N`.
///
/// Unlike [`pair_covariances`] this keeps subject `i`'s voxels on the rows and
/// subject `j`'s on the columns, so widths may differ. With `α = I` and a zero
/// weight it is exactly the classical cross-covariance `Xᵢᵀ Xⱼ`.
pub fn directed_cross(
    xi: &DMatrix<f64>,
    xj: &DMatrix<f64>,
    alpha: &NeighborhoodMatrix,
    weight: Option<f64>,
) -> Result<DMatrix<f64>> {
    check_shapes(xi, xj, alpha)?;
    let weight = weight.unwrap_or_else(|| alpha.between_weight());
    let (m, n) = within_between(xi, xj, alpha);
    Ok(m - n * weight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aligncore::build_alpha;
    use crate::datamodel::LabelVector;

    /// Entry-by-entry transcription of the within/between sums.
    fn loop_oracle(xi: &DMatrix<f64>, xj: &DMatrix<f64>, alpha: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let (t, v) = xi.shape();
        let mut w = DMatrix::zeros(v, v);
        let mut b = DMatrix::zeros(v, v);
        for m in 0..v {
            for n in 0..v {
                for l in 0..t {
                    for k in 0..t {
                        let a = alpha[(l, k)];
                        let fwd = xi[(l, m)] * xj[(k, n)];
                        let rev = xi[(l, n)] * xj[(k, m)];
                        w[(m, n)] += a * fwd + a * rev;
                        b[(m, n)] += (1.0 - a) * fwd + (1.0 - a) * rev;
                    }
                }
            }
        }
        (w, b)
    }

    #[test]
    fn same_class_scalar_example() {
        let xi = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let xj = DMatrix::from_column_slice(2, 1, &[3.0, 4.0]);
        let alpha = build_alpha(&LabelVector::from_labels(vec![0, 0]).unwrap());
        let c = pair_covariances(&xi, &xj, &alpha, None).unwrap();
        assert_eq!(c.w[(0, 0)], 42.0);
        assert_eq!(c.b[(0, 0)], 0.0);
        assert_eq!(c.c_tilde[(0, 0)], 42.0);
    }

    #[test]
    fn identity_alpha_matches_loop() {
        let xi = DMatrix::from_fn(3, 2, |i, j| (i as f64 + 1.0) * (j as f64 - 0.5));
        let xj = DMatrix::from_fn(3, 2, |i, j| ((i * 2 + j) as f64).cos());
        let alpha = NeighborhoodMatrix::identity(3);
        let c = pair_covariances(&xi, &xj, &alpha, None).unwrap();
        let (w, b) = loop_oracle(&xi, &xj, alpha.alpha());
        assert!((&c.w - w).amax() < 1e-12);
        assert!((&c.b - b).amax() < 1e-12);
        let f = xi.transpose() * &xj;
        assert!((&c.w - (&f + f.transpose())).amax() < 1e-12);
    }

    #[test]
    fn directed_cross_reduces_to_classical() {
        let xi = DMatrix::from_fn(4, 3, |i, j| ((i + 3 * j) as f64).sin());
        let xj = DMatrix::from_fn(4, 2, |i, j| ((2 * i + j) as f64).cos());
        let c = directed_cross(&xi, &xj, &NeighborhoodMatrix::identity(4), Some(0.0)).unwrap();
        assert!((c - xi.transpose() * &xj).amax() < 1e-14);
    }

    #[test]
    fn shape_errors() {
        let a = DMatrix::zeros(3, 2);
        let b = DMatrix::zeros(4, 2);
        let alpha = NeighborhoodMatrix::identity(3);
        assert!(matches!(pair_covariances(&a, &b, &alpha, None), Err(Error::InvalidInput(_))));
        assert!(pair_covariances(&a, &DMatrix::zeros(3, 3), &alpha, None).is_err());
        assert!(directed_cross(&a, &a, &NeighborhoodMatrix::identity(2), None).is_err());
    }

    proptest::proptest! {
        #[test]
        fn matrix_form_matches_loop(
            t in 1usize..=5,
            v in 1usize..=4,
            seed in proptest::prelude::any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let xi = DMatrix::from_fn(t, v, |_, _| rng.random_range(-2.0..2.0));
            let xj = DMatrix::from_fn(t, v, |_, _| rng.random_range(-2.0..2.0));
            let y: Vec<usize> = (0..t).map(|_| rng.random_range(0..3)).collect();
            let mut remap = std::collections::BTreeMap::new();
            let y: Vec<usize> = y.iter().map(|c| { let n = remap.len(); *remap.entry(*c).or_insert(n) }).collect();
            let alpha = build_alpha(&LabelVector::from_labels(y).unwrap());
            let c = pair_covariances(&xi, &xj, &alpha, None).unwrap();
            let (w, b) = loop_oracle(&xi, &xj, alpha.alpha());
            proptest::prop_assert!((&c.w - &w).amax() <= 1e-9);
            proptest::prop_assert!((&c.b - &b).amax() <= 1e-9);
            proptest::prop_assert!((&c.w - c.w.transpose()).amax() <= 1e-10);
            proptest::prop_assert!((&c.b - c.b.transpose()).amax() <= 1e-10);
            let expect = &c.w - &c.b * alpha.between_weight();
            proptest::prop_assert!((&c.c_tilde - expect).amax() <= 1e-12);
            let f = xi.transpose() * DMatrix::from_element(t, t, 1.0) * &xj;
            proptest::prop_assert!((&c.w + &c.b - (&f + f.transpose())).amax() <= 1e-9);
        }
    }
}
