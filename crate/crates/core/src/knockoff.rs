//! Gaussian knockoff constructions.
//!
//! A knockoff mechanism is determined by its s-vector: the joint covariance
//! of `[X, X~]` is
//!
//! ```text
//! [ Sigma             Sigma - diag(s) ]
//! [ Sigma - diag(s)   Sigma           ]
//! ```
//!
//! which is PSD iff `0 <= diag(s) <= 2 Sigma`. Given `X`, the knockoff row is
//! drawn from the Gaussian conditional `N(C x, V)` with
//! `C = I - diag(s) P` and `V = 2 diag(s) - diag(s) P diag(s)`, `P = Sigma^-1`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{standard_normal_matrix, CovMatrix};
use crate::linalg::{self, cholesky_psd};

/// Absolute tolerance of the ASDP bisection on gamma.
pub const ASDP_GAMMA_TOL: f64 = 1e-6;
/// `2 Sigma - diag(s)` must keep its smallest eigenvalue above this fraction
/// of `max|Sigma|` for the extended covariance to count as invertible.
pub const DEFINITE_MARGIN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Equi,
    Asdp,
    Ci,
}

impl Mechanism {
    pub const ALL: [Mechanism; 3] = [Mechanism::Equi, Mechanism::Asdp, Mechanism::Ci];

    pub fn as_str(self) -> &'static str {
        match self {
            Mechanism::Equi => "equi",
            Mechanism::Asdp => "asdp",
            Mechanism::Ci => "ci",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equi" => Ok(Mechanism::Equi),
            "asdp" => Ok(Mechanism::Asdp),
            "ci" => Ok(Mechanism::Ci),
            other => Err(Error::InvalidArgument(format!(
                "unknown mechanism {other:?} (expected equi, asdp or ci)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EquiRule {
    /// `s_j = min(2 lambda_min, 1)`; needs a unit diagonal.
    Capped,
    /// `s_j = a lambda_min` with `a` in `(0, 2]`.
    Scaled(f64),
}

pub fn equi_s(c: &CovMatrix, rule: EquiRule) -> Result<DVector<f64>> {
    let lambda_min = c.min_eigenvalue();
    let value = match rule {
        EquiRule::Capped => {
            if !c.is_unit_diagonal() {
                return Err(Error::InvalidArgument(
                    "the default equi rule needs a unit-diagonal covariance (standardize first)".into(),
                ));
            }
            (2.0 * lambda_min).min(1.0)
        }
        EquiRule::Scaled(a) => {
            if !(a > 0.0 && a <= 2.0) {
                return Err(Error::InvalidArgument(format!(
                    "equi scale a must lie in (0, 2], got {a}"
                )));
            }
            a * lambda_min
        }
    };
    Ok(DVector::from_element(c.dim(), value.max(0.0)))
}

/// Conditional-independence s-vector `s_j = 1 / P_jj`.
pub fn ci_s(c: &CovMatrix) -> Result<DVector<f64>> {
    let p = c.require_precision()?;
    Ok(p.diagonal().map(|d| 1.0 / d))
}

/// Outcome of the conditional-independence existence test.
#[derive(Debug, Clone, PartialEq)]
pub struct CiExistence {
    /// `2 diag(diag(P)) - P` is PSD.
    pub exists: bool,
    /// Smallest pivot of the factorization, or the offending pivot when it failed.
    pub witness_pivot: f64,
    pub failing_index: Option<usize>,
    /// The support of `P` is a forest (sufficient).
    pub tree_pattern: bool,
    /// `P` is diagonally dominant (sufficient).
    pub diagonally_dominant: bool,
}

pub fn ci_exists(c: &CovMatrix) -> Result<CiExistence> {
    let p = c.require_precision()?;
    let tree_pattern = linalg::forest_edges(p, 1e-8).is_some();
    let diagonally_dominant = linalg::is_diagonally_dominant(p);
    let (exists, witness_pivot, failing_index) = match cholesky_psd(&linalg::flip_off_diagonal(p)) {
        Ok(f) => (true, f.min_pivot, None),
        Err(Error::NotPsd { index, pivot }) => (false, pivot, Some(index)),
        Err(e) => return Err(e),
    };
    Ok(CiExistence {
        exists,
        witness_pivot,
        failing_index,
        tree_pattern,
        diagonally_dominant,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AsdpApprox {
    /// `Sigma_a = diag(Sigma)`.
    #[default]
    Diagonal,
}

#[derive(Debug, Clone)]
pub struct AsdpSolution {
    pub s_hat: DVector<f64>,
    pub gamma: f64,
    pub s: DVector<f64>,
}

fn gap_matrix(sigma: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let mut m = sigma * 2.0;
    for j in 0..s.len() {
        m[(j, j)] -= s[j];
    }
    m
}

/// Two-step approximate SDP construction.
///
/// Step one solves the SDP against `Sigma_a`; for the diagonal approximation
/// of a unit-diagonal `Sigma` this is `s_hat = 1`. Step two takes the largest
/// `gamma` in `[0, 1]` with `diag(gamma s_hat) <= 2 Sigma`, by bisection.
pub fn asdp_s(c: &CovMatrix, approx: AsdpApprox) -> Result<AsdpSolution> {
    if !c.is_unit_diagonal() {
        return Err(Error::InvalidArgument(
            "asdp needs a unit-diagonal covariance (standardize first)".into(),
        ));
    }
    let s_hat = match approx {
        AsdpApprox::Diagonal => c.sigma().diagonal().map(|d| (2.0 * d).min(1.0)),
    };
    let feasible = |gamma: f64| linalg::is_psd(&gap_matrix(c.sigma(), &(&s_hat * gamma)));

    let gamma = if feasible(1.0) {
        1.0
    } else {
        let (mut lo, mut hi) = (0.0, 1.0);
        while hi - lo > ASDP_GAMMA_TOL {
            let mid = 0.5 * (lo + hi);
            if feasible(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let s = &s_hat * gamma;
    Ok(AsdpSolution { s_hat, gamma, s })
}

/// A knockoff construction: s-vector, extended covariance and the
/// conditional sampler.
#[derive(Debug, Clone)]
pub struct KnockoffSpec {
    mechanism: Mechanism,
    s: DVector<f64>,
    /// Factor `(1 - shrink)` applied to the raw s-vector to keep the extended
    /// covariance invertible.
    shrink: f64,
    sigma_ext: DMatrix<f64>,
    cond_mean_map: DMatrix<f64>,
    cond_cov_chol: DMatrix<f64>,
    gap_min_pivot: f64,
    gap_inverse: Option<DMatrix<f64>>,
}

/// Builds a [`KnockoffSpec`] for an explicit s-vector.
pub fn extend_covariance(c: &CovMatrix, mechanism: Mechanism, s: DVector<f64>) -> Result<KnockoffSpec> {
    let p = c.dim();
    if s.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "s has length {}, expected {p}",
            s.len()
        )));
    }
    if let Some(j) = s.iter().position(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidArgument(format!("s[{j}] = {} is negative", s[j])));
    }
    let sigma = c.sigma();
    let precision = c.require_precision()?;

    let gap = gap_matrix(sigma, &s);
    let gap_factor = match cholesky_psd(&gap) {
        Ok(f) => f,
        Err(Error::NotPsd { index, pivot }) => return Err(Error::Infeasible { index, pivot }),
        Err(e) => return Err(e),
    };
    let gap_inverse = linalg::inverse_from_factor(&gap_factor, linalg::max_abs(sigma)).ok();

    let d = DMatrix::from_diagonal(&s);
    let mut off = sigma.clone();
    for j in 0..p {
        off[(j, j)] -= s[j];
    }
    let mut sigma_ext = DMatrix::zeros(2 * p, 2 * p);
    sigma_ext.view_mut((0, 0), (p, p)).copy_from(sigma);
    sigma_ext.view_mut((p, p), (p, p)).copy_from(sigma);
    sigma_ext.view_mut((0, p), (p, p)).copy_from(&off);
    sigma_ext.view_mut((p, 0), (p, p)).copy_from(&off);

    let dp = &d * precision;
    let cond_mean_map = DMatrix::identity(p, p) - &dp;
    let mut v = &d * 2.0 - &dp * &d;
    // Exact symmetry for the factorization.
    v = (&v + v.transpose()) * 0.5;
    let cond_cov_chol = match cholesky_psd(&v) {
        Ok(f) => f.l,
        Err(Error::NotPsd { index, pivot }) => return Err(Error::Infeasible { index, pivot }),
        Err(e) => return Err(e),
    };

    Ok(KnockoffSpec {
        mechanism,
        s,
        shrink: 0.0,
        sigma_ext,
        cond_mean_map,
        cond_cov_chol,
        gap_min_pivot: gap_factor.min_pivot,
        gap_inverse,
    })
}

impl KnockoffSpec {
    /// Builds the spec of a named mechanism.
    ///
    /// Equi and ASDP s-vectors sit on (or within bisection tolerance of) the
    /// boundary `lambda_min(2 Sigma - diag(s)) = 0`. They are shrunk by
    /// `(1 - eps)`, `eps = 1e-8, 1e-7, ...`, until that eigenvalue exceeds
    /// [`DEFINITE_MARGIN`], so the extended precision exists. CI s-vectors are
    /// used as is.
    pub fn for_mechanism(c: &CovMatrix, mechanism: Mechanism) -> Result<Self> {
        let raw = match mechanism {
            Mechanism::Equi => equi_s(c, EquiRule::Capped)?,
            Mechanism::Asdp => asdp_s(c, AsdpApprox::Diagonal)?.s,
            Mechanism::Ci => ci_s(c)?,
        };
        let (s, shrink) = match mechanism {
            Mechanism::Ci => (raw, 0.0),
            _ => shrink_to_definite(c, &raw)?,
        };
        let mut spec = extend_covariance(c, mechanism, s)?;
        spec.shrink = shrink;
        Ok(spec)
    }

    pub fn mechanism(&self) -> Mechanism {
        self.mechanism
    }

    pub fn s(&self) -> &DVector<f64> {
        &self.s
    }

    pub fn shrink(&self) -> f64 {
        self.shrink
    }

    pub fn dim(&self) -> usize {
        self.s.len()
    }

    pub fn sigma_ext(&self) -> &DMatrix<f64> {
        &self.sigma_ext
    }

    pub fn cond_mean_map(&self) -> &DMatrix<f64> {
        &self.cond_mean_map
    }

    pub fn cond_cov_chol(&self) -> &DMatrix<f64> {
        &self.cond_cov_chol
    }

    /// Smallest Cholesky pivot of `2 Sigma - diag(s)`.
    pub fn gap_min_pivot(&self) -> f64 {
        self.gap_min_pivot
    }

    /// Smallest eigenvalue of `2 Sigma - diag(s)`.
    pub fn gap_min_eigenvalue(&self) -> f64 {
        let p = self.dim();
        let mut gap = self.sigma_ext.view((0, 0), (p, p)) + self.sigma_ext.view((0, p), (p, p));
        gap = (&gap + gap.transpose()) * 0.5;
        linalg::min_eigenvalue(&gap)
    }

    fn blocks(&self) -> Result<(&DMatrix<f64>, DVector<f64>)> {
        let singular = || Error::Singular {
            min_pivot: self.gap_min_pivot.min(self.s.min()),
        };
        let a = self.gap_inverse.as_ref().ok_or_else(singular)?;
        if self.s.iter().any(|&v| !(v > 0.0)) {
            return Err(singular());
        }
        Ok((a, self.s.map(|v| 1.0 / v)))
    }

    /// Inverse of the extended covariance.
    ///
    /// Rotating by `[[I, I], [I, -I]] / sqrt(2)` block-diagonalizes the
    /// extended covariance into `2 Sigma - diag(s)` and `diag(s)`, so with
    /// `A = (2 Sigma - diag(s))^-1`, `B = diag(s)^-1` the inverse is
    /// `[[A + B, A - B], [A - B, A + B]] / 2`.
    pub fn extended_precision(&self) -> Result<DMatrix<f64>> {
        let (a, b) = self.blocks()?;
        let p = self.dim();
        let mut out = DMatrix::zeros(2 * p, 2 * p);
        for j in 0..p {
            for i in 0..p {
                let a_ij = 0.5 * a[(i, j)];
                let b_ij = if i == j { 0.5 * b[i] } else { 0.0 };
                out[(i, j)] = a_ij + b_ij;
                out[(i + p, j + p)] = a_ij + b_ij;
                out[(i, j + p)] = a_ij - b_ij;
                out[(i + p, j)] = a_ij - b_ij;
            }
        }
        Ok(out)
    }

    /// Diagonal of [`Self::extended_precision`] (length `2p`).
    pub fn extended_precision_diagonal(&self) -> Result<DVector<f64>> {
        let (a, b) = self.blocks()?;
        let p = self.dim();
        Ok(DVector::from_fn(2 * p, |i, _| {
            let j = i % p;
            0.5 * (a[(j, j)] + b[j])
        }))
    }
}

fn shrink_to_definite(c: &CovMatrix, raw: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let margin = DEFINITE_MARGIN * linalg::max_abs(c.sigma());
    let gap_min = |s: &DVector<f64>| linalg::min_eigenvalue(&gap_matrix(c.sigma(), s));
    if gap_min(raw) > margin {
        return Ok((raw.clone(), 0.0));
    }
    let mut eps = 1e-8;
    while eps < 1.0 {
        let s = raw * (1.0 - eps);
        if gap_min(&s) > margin {
            return Ok((s, eps));
        }
        eps *= 10.0;
    }
    Err(Error::Singular {
        min_pivot: gap_min(raw),
    })
}

/// Draws `X~` given `X`: row `i` is `C x_i + chol(V) z_i`.
pub fn sample_knockoffs<R: Rng + ?Sized>(spec: &KnockoffSpec, x: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = spec.dim();
    if x.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "X has {} columns, expected {p}",
            x.ncols()
        )));
    }
    let z = standard_normal_matrix(x.nrows(), p, rng);
    Ok(x * spec.cond_mean_map.transpose() + z * spec.cond_cov_chol.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{build_cov, empirical_covariance, sample_mvn, CovModel};
    use crate::rng;

    fn two_by_two(rho: f64) -> CovMatrix {
        CovMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0])).unwrap()
    }

    fn diag(values: &[f64]) -> CovMatrix {
        CovMatrix::new(DMatrix::from_diagonal(&DVector::from_row_slice(values))).unwrap()
    }

    #[test]
    fn equi_examples() {
        let s = equi_s(&CovMatrix::new(DMatrix::identity(4, 4)).unwrap(), EquiRule::Capped).unwrap();
        assert!(s.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let c = two_by_two(0.5);
        let s = equi_s(&c, EquiRule::Capped).unwrap();
        assert!(s.iter().all(|&v| (v - 1.0).abs() < 1e-10));
        let s = equi_s(&c, EquiRule::Scaled(1.0)).unwrap();
        assert!(s.iter().all(|&v| (v - 0.5).abs() < 1e-10));
        assert!(equi_s(&c, EquiRule::Scaled(2.5)).is_err());
        assert!(equi_s(&c, EquiRule::Scaled(0.0)).is_err());
        assert!(equi_s(&diag(&[2.0, 1.0]), EquiRule::Capped).is_err());
    }

    #[test]
    fn ci_examples() {
        let s = ci_s(&diag(&[2.0, 3.0, 0.5])).unwrap();
        assert!((s - DVector::from_row_slice(&[2.0, 3.0, 0.5])).amax() < 1e-12);
        let s = ci_s(&two_by_two(0.5)).unwrap();
        assert!(s.iter().all(|&v| (v - 0.75).abs() < 1e-12));
    }

    #[test]
    fn ci_matches_partitioned_conditional_variance() {
        let c = build_cov(&CovModel::BinaryTree { p: 3, rho: 0.5 }).unwrap();
        let s = ci_s(&c).unwrap();
        let sigma = c.sigma();
        for j in 0..3 {
            let rest: Vec<usize> = (0..3).filter(|&k| k != j).collect();
            let s_rr = DMatrix::from_fn(2, 2, |a, b| sigma[(rest[a], rest[b])]);
            let s_jr = DVector::from_fn(2, |a, _| sigma[(j, rest[a])]);
            let cond = sigma[(j, j)] - (s_jr.transpose() * s_rr.try_inverse().unwrap() * &s_jr)[(0, 0)];
            assert!((s[j] - cond).abs() < 1e-10);
        }
    }

    #[test]
    fn ci_existence_examples() {
        let tree = build_cov(&CovModel::BinaryTree { p: 15, rho: 0.6 }).unwrap();
        let e = ci_exists(&tree).unwrap();
        assert!(e.exists && e.tree_pattern);

        let chain = build_cov(&CovModel::MarkovChain {
            p: 6,
            rho_seq: vec![0.9, -0.4, 0.0, 0.7, 0.2],
        })
        .unwrap();
        assert!(ci_exists(&chain).unwrap().exists);

        // Diagonally dominant precision on a triangle (not a tree).
        let prec = DMatrix::from_row_slice(3, 3, &[2.0, -0.5, 0.6, -0.5, 2.0, 0.7, 0.6, 0.7, 2.0]);
        let c = CovMatrix::new(prec.try_inverse().unwrap()).unwrap();
        let e = ci_exists(&c).unwrap();
        assert!(e.exists && e.diagonally_dominant && !e.tree_pattern);

        // Found by randomized search over 3x3 correlation matrices.
        let c = CovMatrix::new(DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.24, 0.75, 0.24, 1.0, 0.52, 0.75, 0.52, 1.0],
        ))
        .unwrap();
        let e = ci_exists(&c).unwrap();
        assert!(!e.exists && !e.tree_pattern && !e.diagonally_dominant);
        assert!(KnockoffSpec::for_mechanism(&c, Mechanism::Ci).is_err());

        assert!(ci_exists(&two_by_two(1.0)).is_err());
    }

    #[test]
    fn asdp_examples() {
        let a = asdp_s(&CovMatrix::new(DMatrix::identity(3, 3)).unwrap(), AsdpApprox::Diagonal).unwrap();
        assert_eq!(a.gamma, 1.0);
        let a = asdp_s(&two_by_two(0.5), AsdpApprox::Diagonal).unwrap();
        assert!((a.gamma - 1.0).abs() < ASDP_GAMMA_TOL);
        let a = asdp_s(&two_by_two(0.9), AsdpApprox::Diagonal).unwrap();
        assert!((a.gamma - 0.2).abs() < ASDP_GAMMA_TOL);
        assert!(a.s.iter().all(|&v| (v - 0.2).abs() < ASDP_GAMMA_TOL));
        assert!(asdp_s(&diag(&[2.0, 1.0]), AsdpApprox::Diagonal).is_err());
    }

    #[test]
    fn zero_s_copies_design() {
        let c = build_cov(&CovModel::BinaryTree { p: 4, rho: 0.5 }).unwrap();
        let spec = extend_covariance(&c, Mechanism::Equi, DVector::zeros(4)).unwrap();
        let p = 4;
        assert_eq!(spec.sigma_ext().view((0, p), (p, p)), c.sigma().view((0, 0), (p, p)));
        assert!((spec.cond_mean_map() - DMatrix::identity(p, p)).amax() < 1e-12);
        assert!(spec.cond_cov_chol().amax() < 1e-12);
        let x = sample_mvn(&c, 10, &mut rng::stream(1));
        let xk = sample_knockoffs(&spec, &x, &mut rng::stream(2)).unwrap();
        assert!((xk - &x).amax() < 1e-12);
        assert!(spec.extended_precision().is_err());
    }

    #[test]
    fn diagonal_full_s_is_independent_copy() {
        let c = diag(&[1.0, 2.0]);
        let spec = extend_covariance(&c, Mechanism::Ci, DVector::from_row_slice(&[1.0, 2.0])).unwrap();
        assert!(spec.cond_mean_map().amax() < 1e-12);
        let v = spec.cond_cov_chol() * spec.cond_cov_chol().transpose();
        assert!((v - c.sigma()).amax() < 1e-12);

        let n = 100_000;
        let x = sample_mvn(&c, n, &mut rng::stream(3));
        let xk = sample_knockoffs(&spec, &x, &mut rng::stream(4)).unwrap();
        let cross = x.tr_mul(&xk) / n as f64;
        // Entry scale is sqrt(Sigma_ii Sigma_jj) <= 2.
        assert!(cross.amax() < 2.0 * 5.0 / (n as f64).sqrt());
    }

    #[test]
    fn infeasible_s_rejected() {
        let c = two_by_two(0.9);
        let err = extend_covariance(&c, Mechanism::Equi, DVector::from_element(2, 1.0)).unwrap_err();
        assert!(matches!(err, Error::Infeasible { .. }));
        assert!(extend_covariance(&c, Mechanism::Equi, DVector::from_element(2, -0.1)).is_err());
        assert!(extend_covariance(&c, Mechanism::Equi, DVector::from_element(3, 0.1)).is_err());
    }

    #[test]
    fn joint_law_of_tree_ci_knockoffs() {
        let c = build_cov(&CovModel::BinaryTree { p: 3, rho: 0.5 }).unwrap();
        let spec = KnockoffSpec::for_mechanism(&c, Mechanism::Ci).unwrap();
        let n = 100_000;
        let x = sample_mvn(&c, n, &mut rng::stream(5));
        let xk = sample_knockoffs(&spec, &x, &mut rng::stream(6)).unwrap();
        let mut joint = DMatrix::zeros(n, 6);
        joint.view_mut((0, 0), (n, 3)).copy_from(&x);
        joint.view_mut((0, 3), (n, 3)).copy_from(&xk);
        let emp = empirical_covariance(&joint);
        assert!((emp - spec.sigma_ext()).amax() < 5.0 / (n as f64).sqrt());
    }

    #[test]
    fn extended_precision_matches_dense_inverse() {
        let c = build_cov(&CovModel::BinaryTree { p: 7, rho: 0.5 }).unwrap();
        for mech in Mechanism::ALL {
            let spec = KnockoffSpec::for_mechanism(&c, mech).unwrap();
            let dense = spec.sigma_ext().clone().try_inverse().unwrap();
            let block = spec.extended_precision().unwrap();
            let rel = (&dense - &block).amax() / dense.amax();
            assert!(rel < 1e-6, "{mech}: {rel}");
            let d = spec.extended_precision_diagonal().unwrap();
            assert!((d - block.diagonal()).amax() < 1e-12);
        }
    }

    #[test]
    fn equi_is_shrunk_off_the_boundary() {
        let c = build_cov(&CovModel::BinaryTree { p: 31, rho: 0.5 }).unwrap();
        let spec = KnockoffSpec::for_mechanism(&c, Mechanism::Equi).unwrap();
        assert!(spec.shrink() > 0.0);
        assert!(spec.gap_min_eigenvalue() > DEFINITE_MARGIN);
        let ci = KnockoffSpec::for_mechanism(&c, Mechanism::Ci).unwrap();
        assert_eq!(ci.shrink(), 0.0);
    }

    #[test]
    fn mechanism_names_round_trip() {
        for m in Mechanism::ALL {
            assert_eq!(m.as_str().parse::<Mechanism>().unwrap(), m);
        }
        assert!("sdp".parse::<Mechanism>().is_err());
    }
}
