use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{directed_cross, pair_covariances, NeighborhoodMatrix};
use crate::datamodel::SubjectData;
use crate::error::{Error, Result};
use crate::numkern::{svd, whitening, SymMatrix, Whitening};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMode {
    /// Cross term `Xᵢᵀ Xⱼ`, no labels.
    Classical,
    /// Label-aware cross term built from the neighborhood matrix.
    Ldha,
}

/// Which discriminant cross-covariance the LDHA mode feeds to the SVD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrossTerm {
    /// `Xᵢᵀ α Xⱼ − w · Xᵢᵀ (J − α) Xⱼ`; rows index subject `i`'s voxels.
    #[default]
    Directed,
    /// `c_tilde = W − w · B` with voxel-index symmetrization; needs equal widths.
    Symmetrized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub mode: SolverMode,
    /// Added to every eigenvalue of `XᵀX` before the inverse square root.
    pub ridge: f64,
    /// Lower clamp for shifted eigenvalues.
    pub floor: f64,
    /// Retained components; `None` means `min(T, V)`.
    pub k: Option<usize>,
    /// Overrides the `η / T²` weight on the between-class term.
    pub between_weight: Option<f64>,
    pub cross_term: CrossTerm,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mode: SolverMode::Ldha,
            ridge: 1.0,
            floor: 1e-10,
            k: None,
            between_weight: None,
            cross_term: CrossTerm::Directed,
        }
    }
}

impl SolverConfig {
    pub fn classical() -> Self {
        SolverConfig {
            mode: SolverMode::Classical,
            ..SolverConfig::default()
        }
    }

    pub fn with_mode(&self, mode: SolverMode) -> Self {
        SolverConfig { mode, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::invalid(format!("ridge must be finite and >= 0, got {}", self.ridge)));
        }
        if !(self.floor > 0.0 && self.floor.is_finite()) {
            return Err(Error::invalid(format!("floor must be finite and > 0, got {}", self.floor)));
        }
        if self.k == Some(0) {
            return Err(Error::invalid("k must be at least 1"));
        }
        if let Some(w) = self.between_weight {
            if !w.is_finite() {
                return Err(Error::invalid("between_weight must be finite"));
            }
        }
        Ok(())
    }
}

/// One subject's linear map into the shared space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMap {
    /// `V × k` map.
    pub r: DMatrix<f64>,
    pub k: usize,
    pub ridge: f64,
    pub floor: f64,
    /// Leading singular values of the whitened cross-covariance.
    pub canonical_corrs: Vec<f64>,
}

impl AlignmentMap {
    /// The first `k` columns of the identity.
    pub fn truncated_identity(v: usize, k: usize, cfg: &SolverConfig) -> Self {
        AlignmentMap {
            r: DMatrix::identity(v, k),
            k,
            ridge: cfg.ridge,
            floor: cfg.floor,
            canonical_corrs: Vec::new(),
        }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.r.nrows() {
            return Err(Error::invalid(format!(
                "map expects {} columns, data has {}",
                self.r.nrows(),
                x.ncols()
            )));
        }
        Ok(x * &self.r)
    }
}

struct PairSolution {
    whiten_i: Whitening,
    whiten_j: Whitening,
    p: DMatrix<f64>,
    q: DMatrix<f64>,
    s: DVector<f64>,
}

fn gram(x: &DMatrix<f64>) -> Result<SymMatrix> {
    SymMatrix::new(x.transpose() * x)
}

fn check_pair(xi: &SubjectData, xj: &SubjectData, cfg: &SolverConfig) -> Result<()> {
    cfg.validate()?;
    if !xi.is_standardized() || !xj.is_standardized() {
        return Err(Error::invalid("solver inputs must be standardized"));
    }
    if xi.t() != xj.t() {
        return Err(Error::invalid(format!("time points differ: {} vs {}", xi.t(), xj.t())));
    }
    Ok(())
}

fn cross_term(
    xi: &DMatrix<f64>,
    xj: &DMatrix<f64>,
    alpha: Option<&NeighborhoodMatrix>,
    cfg: &SolverConfig,
) -> Result<DMatrix<f64>> {
    match cfg.mode {
        SolverMode::Classical => Ok(xi.transpose() * xj),
        SolverMode::Ldha => {
            let alpha = alpha.ok_or_else(|| Error::invalid("ldha mode needs a neighborhood matrix"))?;
            match cfg.cross_term {
                CrossTerm::Directed => directed_cross(xi, xj, alpha, cfg.between_weight),
                CrossTerm::Symmetrized => Ok(pair_covariances(xi, xj, alpha, cfg.between_weight)?.c_tilde),
            }
        }
    }
}

fn solve_whitened(xi: &DMatrix<f64>, xj: &DMatrix<f64>, cross: &DMatrix<f64>, cfg: &SolverConfig) -> Result<PairSolution> {
    let whiten_i = whitening(&gram(xi)?, cfg.ridge, cfg.floor)?;
    let whiten_j = whitening(&gram(xj)?, cfg.ridge, cfg.floor)?;
    let h = whiten_i.inv_sqrt.as_matrix() * cross * whiten_j.inv_sqrt.as_matrix();
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("whitened cross-covariance is not finite".into()));
    }
    let dec = svd(&h)?;
    Ok(PairSolution {
        whiten_i,
        whiten_j,
        p: dec.u,
        q: dec.vt.transpose(),
        s: dec.s,
    })
}

fn resolve_k(cfg: &SolverConfig, limit: usize) -> Result<usize> {
    let k = cfg.k.unwrap_or(limit);
    if k == 0 || k > limit {
        return Err(Error::invalid(format!("k = {k} must lie in 1..={limit}")));
    }
    Ok(k)
}

/// Pairwise solver: whiten both sides, take the SVD of
/// `H = Cᵢ^{-1/2} · cross · Cⱼ^{-1/2}` and map back with the same whiteners.
///
/// Returns the maps for `xi` and `xj`, each with `k` columns in canonical
/// order.
pub fn solve_pair(
    xi: &SubjectData,
    xj: &SubjectData,
    alpha: Option<&NeighborhoodMatrix>,
    cfg: &SolverConfig,
) -> Result<(AlignmentMap, AlignmentMap)> {
    check_pair(xi, xj, cfg)?;
    let k = resolve_k(cfg, xi.t().min(xi.v()).min(xj.v()))?;
    let cross = cross_term(xi.x(), xj.x(), alpha, cfg)?;
    let sol = solve_whitened(xi.x(), xj.x(), &cross, cfg)?;
    let corrs: Vec<f64> = sol.s.iter().take(k).copied().collect();
    let ri = sol.whiten_i.inv_sqrt.as_matrix() * sol.p.columns(0, k);
    let rj = sol.whiten_j.inv_sqrt.as_matrix() * sol.q.columns(0, k);
    if ri.iter().chain(rj.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("alignment map is not finite".into()));
    }
    let wrap = |r| AlignmentMap {
        r,
        k,
        ridge: cfg.ridge,
        floor: cfg.floor,
        canonical_corrs: corrs.clone(),
    };
    Ok((wrap(ri), wrap(rj)))
}

/// Map of `x` onto a fixed target: minimizes `‖x·R − target‖` subject to
/// `Rᵀ (XᵀX + ridge·I) R = I` on the retained components.
///
/// With `Cₓ^{-1/2} · cross(x, target) = P Λ Qᵀ` the minimizer is
/// `R = Cₓ^{-1/2} P_k Q_kᵀ`, a `V × V_target` map whose output lives in the
/// target's column frame. Only `x` is whitened. The sign ambiguity of the
/// SVD cancels in `P Qᵀ`. `canonical_corrs` holds the leading `Λ`.
pub fn align_to_target(
    x: &SubjectData,
    target: &SubjectData,
    alpha: Option<&NeighborhoodMatrix>,
    cfg: &SolverConfig,
) -> Result<AlignmentMap> {
    check_pair(x, target, cfg)?;
    let limit = x.t().min(x.v()).min(target.v());
    let k = cfg.k.unwrap_or(limit).min(limit);
    if k == 0 {
        return Err(Error::invalid("no components to align"));
    }
    let cross = cross_term(x.x(), target.x(), alpha, cfg)?;
    let whiten = whitening(&gram(x.x())?, cfg.ridge, cfg.floor)?;
    let h = whiten.inv_sqrt.as_matrix() * cross;
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("whitened cross-covariance is not finite".into()));
    }
    let dec = svd(&h)?;
    let rotation = dec.u.columns(0, k) * dec.vt.rows(0, k);
    let r = whiten.inv_sqrt.as_matrix() * rotation;
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("alignment map is not finite".into()));
    }
    Ok(AlignmentMap {
        k: r.ncols(),
        r,
        ridge: cfg.ridge,
        floor: cfg.floor,
        canonical_corrs: dec.s.iter().take(k).copied().collect(),
    })
}

/// Max-abs deviation of `Rᵀ (XᵀX + ridge·I) R` from the identity, over the
/// components whose whitened direction avoids the floored eigenspace.
///
/// Returns the deviation and the number of components checked.
pub fn constraint_deviation(x: &DMatrix<f64>, map: &AlignmentMap) -> Result<(f64, usize)> {
    let c = gram(x)?;
    let wh = whitening(&c, map.ridge, map.floor)?;
    let shifted = c.as_matrix() + DMatrix::identity(c.dim(), c.dim()) * map.ridge;
    let d = map.r.transpose() * &shifted * &map.r;

    // whitened directions P = C_reg^{1/2} R
    let p = wh.sqrt() * &map.r;
    let proj = wh.floored_projector();
    let active: Vec<usize> = (0..map.r.ncols())
        .filter(|&c| (&proj * p.column(c)).norm() <= 1e-6 * p.column(c).norm().max(1.0))
        .collect();

    let mut dev = 0.0f64;
    for &a in &active {
        for &b in &active {
            let target = if a == b { 1.0 } else { 0.0 };
            dev = dev.max((d[(a, b)] - target).abs());
        }
    }
    Ok((dev, active.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aligncore::{build_alpha, isc_matrices, mapped_isc};
    use crate::datamodel::LabelVector;
    use crate::numkern::inv_sqrt_psd;
    use rand::{Rng, SeedableRng};

    fn random_subject(t: usize, v: usize, seed: u64) -> SubjectData {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(t, v, |_, _| rng.random_range(-1.0..1.0));
        SubjectData::standardized(format!("s{seed}"), &x).unwrap()
    }

    fn orthogonal(v: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(v, v, |_, _| rng.random_range(-1.0..1.0)).qr().q()
    }

    #[test]
    fn self_pair_full_rank() {
        let x = random_subject(8, 4, 1);
        let cfg = SolverConfig {
            ridge: 0.0,
            ..SolverConfig::classical()
        };
        let (ri, rj) = solve_pair(&x, &x, None, &cfg).unwrap();
        assert_eq!(ri.k, 4);
        for c in &ri.canonical_corrs {
            assert!((c - 1.0).abs() < 1e-8, "{c}");
        }
        let a = x.x() * &ri.r;
        let b = x.x() * &rj.r;
        assert!((a - b).amax() < 1e-6);
    }

    #[test]
    fn orthogonal_mixing_is_recovered() {
        let x = random_subject(10, 4, 2);
        let xq = SubjectData::standardized("xq", &(x.x() * orthogonal(4, 3))).unwrap();
        let cfg = SolverConfig {
            ridge: 0.0,
            ..SolverConfig::classical()
        };
        let (ri, rj) = solve_pair(&x, &xq, None, &cfg).unwrap();
        let got = mapped_isc(&(x.x() * &ri.r), &(xq.x() * &rj.r)).unwrap();
        assert!(got > 1.0 - 1e-5, "{got}");
    }

    #[test]
    fn ldha_with_identity_alpha_and_zero_weight_is_classical() {
        let xi = random_subject(9, 4, 4);
        let xj = random_subject(9, 4, 5);
        let classical = SolverConfig {
            ridge: 0.0,
            ..SolverConfig::classical()
        };
        let ldha = SolverConfig {
            mode: SolverMode::Ldha,
            between_weight: Some(0.0),
            ..classical.clone()
        };
        let alpha = NeighborhoodMatrix::identity(9);
        let (ci, cj) = solve_pair(&xi, &xj, None, &classical).unwrap();
        let (li, lj) = solve_pair(&xi, &xj, Some(&alpha), &ldha).unwrap();
        for c in 0..4 {
            let dot = ci.r.column(c).dot(&li.r.column(c)).signum();
            assert!((ci.r.column(c) - li.r.column(c) * dot).amax() < 1e-8);
            assert!((cj.r.column(c) - lj.r.column(c) * dot).amax() < 1e-8);
        }
    }

    #[test]
    fn generalized_eigen_residual() {
        let xi = random_subject(3, 2, 6);
        let xj = random_subject(3, 2, 7);
        let labels = LabelVector::from_labels(vec![0, 1, 0]).unwrap();
        let alpha = build_alpha(&labels);
        let cfg = SolverConfig {
            ridge: 1e-3,
            ..SolverConfig::default()
        };
        let (ri, _) = solve_pair(&xi, &xj, Some(&alpha), &cfg).unwrap();
        let reg = |x: &DMatrix<f64>| x.transpose() * x + DMatrix::identity(x.ncols(), x.ncols()) * cfg.ridge;
        let ci = reg(xi.x());
        let cj_inv = reg(xj.x()).try_inverse().unwrap();
        let ct = directed_cross(xi.x(), xj.x(), &alpha, None).unwrap();
        let lam2 = DMatrix::from_diagonal(&DVector::from_iterator(ri.k, ri.canonical_corrs.iter().map(|s| s * s)));
        let resid = &ct * cj_inv * ct.transpose() * &ri.r - ci * &ri.r * lam2;
        assert!(resid.norm() <= 1e-6 * reg(xi.x()).norm(), "{}", resid.norm());
    }

    #[test]
    fn constraint_holds_with_ridge_and_when_floored() {
        let xi = random_subject(5, 8, 8);
        let xj = random_subject(5, 8, 9);
        for ridge in [0.0, 0.1] {
            let cfg = SolverConfig {
                ridge,
                floor: 1e-8,
                ..SolverConfig::classical()
            };
            let (ri, rj) = solve_pair(&xi, &xj, None, &cfg).unwrap();
            for (x, r) in [(&xi, &ri), (&xj, &rj)] {
                let (dev, n) = constraint_deviation(x.x(), r).unwrap();
                assert!(dev <= 1e-5, "ridge {ridge}: {dev}");
                assert!(n >= 1);
            }
        }
    }

    #[test]
    fn errors() {
        let x = random_subject(4, 3, 10);
        let y = random_subject(5, 3, 11);
        let cfg = SolverConfig::classical();
        assert!(solve_pair(&x, &y, None, &cfg).is_err());
        let too_many = SolverConfig {
            k: Some(4),
            ..cfg.clone()
        };
        assert!(matches!(solve_pair(&x, &x, None, &too_many), Err(Error::InvalidInput(_))));
        assert!(solve_pair(&x, &x, None, &SolverConfig::default()).is_err());
        let raw = SubjectData::new("raw", DMatrix::from_element(4, 3, 1.0), false).unwrap();
        assert!(solve_pair(&raw, &x, None, &cfg).is_err());
        let symmetric = SolverConfig {
            cross_term: CrossTerm::Symmetrized,
            ..SolverConfig::default()
        };
        let narrow = random_subject(4, 2, 12);
        assert!(solve_pair(&x, &narrow, Some(&NeighborhoodMatrix::identity(4)), &symmetric).is_err());
    }

    #[test]
    fn align_to_target_recovers_orthonormal_target() {
        let x = random_subject(12, 5, 13);
        let cfg = SolverConfig {
            ridge: 0.0,
            ..SolverConfig::classical()
        };
        // a target with orthonormal columns inside x's column space
        let w = inv_sqrt_psd(&SymMatrix::new(x.x().transpose() * x.x()).unwrap(), 0.0, 1e-12).unwrap();
        let target_m = x.x() * w.as_matrix() * orthogonal(5, 14).columns(0, 3);
        let target = SubjectData::new("g", target_m, true).unwrap();
        let map = align_to_target(&x, &target, None, &cfg).unwrap();
        assert_eq!(map.r.shape(), (5, 3));
        let mapped = x.x() * &map.r;
        assert!((mapped - target.x()).amax() < 1e-8);
    }

    #[test]
    fn align_to_target_beats_random_feasible_maps() {
        let x = random_subject(10, 6, 16);
        let target = random_subject(10, 4, 17);
        let cfg = SolverConfig {
            ridge: 0.3,
            ..SolverConfig::classical()
        };
        let map = align_to_target(&x, &target, None, &cfg).unwrap();
        let (dev, active) = constraint_deviation(x.x(), &map).unwrap();
        assert_eq!(active, 4);
        assert!(dev < 1e-9, "{dev}");
        let best = (x.x() * &map.r - target.x()).norm();
        let w = inv_sqrt_psd(&SymMatrix::new(x.x().transpose() * x.x()).unwrap(), 0.3, 1e-10).unwrap();
        for seed in 0..50 {
            let other = w.as_matrix() * orthogonal(6, 100 + seed).columns(0, 4);
            let resid = (x.x() * other - target.x()).norm();
            assert!(best <= resid + 1e-12, "{best} > {resid}");
        }
    }

    #[test]
    fn scaling_before_standardization_is_absorbed() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(15);
        let raw_i = DMatrix::from_fn(8, 4, |_, _| rng.random_range(-1.0..1.0));
        let raw_j = DMatrix::from_fn(8, 4, |_, _| rng.random_range(-1.0..1.0));
        let cfg = SolverConfig::classical();
        let a = solve_pair(
            &SubjectData::standardized("i", &raw_i).unwrap(),
            &SubjectData::standardized("j", &raw_j).unwrap(),
            None,
            &cfg,
        )
        .unwrap();
        let b = solve_pair(
            &SubjectData::standardized("i", &(raw_i * 7.5)).unwrap(),
            &SubjectData::standardized("j", &(raw_j * 0.2)).unwrap(),
            None,
            &cfg,
        )
        .unwrap();
        assert!((&a.0.r - &b.0.r).amax() < 1e-9);
        assert!((&a.1.r - &b.1.r).amax() < 1e-9);
    }

    proptest::proptest! {
        #[test]
        fn self_alignment_does_not_lower_isc(seed in proptest::prelude::any::<u64>()) {
            let x = random_subject(10, 4, seed);
            let cfg = SolverConfig { ridge: 0.0, ..SolverConfig::classical() };
            let (ri, rj) = solve_pair(&x, &x, None, &cfg).unwrap();
            let before = isc_matrices(x.x(), x.x()).unwrap();
            let after = mapped_isc(&(x.x() * &ri.r), &(x.x() * &rj.r)).unwrap();
            proptest::prop_assert!(after >= before - 1e-9);
            for c in &ri.canonical_corrs {
                proptest::prop_assert!(*c >= 0.0 && *c <= 1.0 + 1e-8);
            }
        }

        #[test]
        fn canonical_corrs_nonincreasing(seed in proptest::prelude::any::<u64>(), ridge in 0.0f64..2.0) {
            let xi = random_subject(6, 5, seed);
            let xj = random_subject(6, 5, seed.wrapping_add(1));
            let cfg = SolverConfig { ridge, ..SolverConfig::classical() };
            let (ri, _) = solve_pair(&xi, &xj, None, &cfg).unwrap();
            for w in ri.canonical_corrs.windows(2) {
                proptest::prop_assert!(w[0] >= w[1]);
            }
        }
    }
}
