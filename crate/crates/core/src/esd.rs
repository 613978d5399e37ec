//! Effective signal deficiency diagnostics.
//!
//! Every report reduces a nonnegative sequence to its Lévy-Prokhorov distance
//! from a point mass at zero:
//!
//! ```text
//! lp(v) = inf { eps > 0 : #{j : v_j >= eps} / m <= eps }
//! ```

use std::fmt;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::gaussian::CovMatrix;
use crate::knockoff::{KnockoffSpec, Mechanism};
use crate::linalg;

/// Agreement required between the closed-form CI diagonal and the explicit
/// extended precision.
pub const CI_CROSS_CHECK_TOL: f64 = 1e-8;

/// Exact `lp` distance by a scan over the sorted values.
///
/// With `v(1) >= ... >= v(m)`, the count `#{v >= eps}` equals `k` on
/// `(v(k+1), v(k)]`, so the smallest feasible `eps` on that piece is
/// `max(k/m, v(k+1))` provided it does not exceed `v(k)`.
pub fn lp_distance_zero(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("lp distance needs at least one value".into()));
    }
    if let Some(v) = values.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "lp distance needs nonnegative values, got {v}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let m = sorted.len();

    // k = 0: the piece (v(1), inf) is always feasible.
    let mut best = sorted[0];
    for k in 1..=m {
        let upper = sorted[k - 1];
        let lower = if k < m { sorted[k] } else { 0.0 };
        if lower == upper {
            continue;
        }
        let candidate = (k as f64 / m as f64).max(lower);
        if candidate <= upper && candidate < best {
            best = candidate;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EsdProcedure {
    Lasso,
    KnockoffGeneric(Mechanism),
    Equi,
    CiTree,
}

impl fmt::Display for EsdProcedure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EsdProcedure::Lasso => f.write_str("lasso"),
            EsdProcedure::KnockoffGeneric(m) => write!(f, "knockoff_generic_{m}"),
            EsdProcedure::Equi => f.write_str("equi"),
            EsdProcedure::CiTree => f.write_str("ci_tree"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EsdReport {
    pub procedure: EsdProcedure,
    /// Unscaled sequence fed to the distance.
    pub values: Vec<f64>,
    pub scale: f64,
    pub lp: f64,
    /// Unclamped scalar functional, for reports that have one.
    pub raw: Option<f64>,
}

impl EsdReport {
    fn from_values(procedure: EsdProcedure, values: Vec<f64>, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
        }
        let scaled: Vec<f64> = values.iter().map(|v| v / scale).collect();
        let lp = lp_distance_zero(&scaled)?;
        Ok(EsdReport {
            procedure,
            values,
            scale,
            lp,
            raw: None,
        })
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn median_value(&self) -> f64 {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        let m = v.len();
        if m % 2 == 1 {
            v[m / 2]
        } else {
            0.5 * (v[m / 2 - 1] + v[m / 2])
        }
    }
}

/// Thresholded debiased Lasso: the diagonal of `P`.
pub fn esd_lasso(c: &CovMatrix, scale: f64) -> Result<EsdReport> {
    let p = c.require_precision()?;
    EsdReport::from_values(EsdProcedure::Lasso, p.diagonal().iter().copied().collect(), scale)
}

/// Any knockoff construction: all `2p` diagonal entries of the extended precision.
pub fn esd_knockoff_generic(spec: &KnockoffSpec, scale: f64) -> Result<EsdReport> {
    let diag = spec.extended_precision_diagonal()?;
    EsdReport::from_values(
        EsdProcedure::KnockoffGeneric(spec.mechanism()),
        diag.iter().copied().collect(),
        scale,
    )
}

/// Equi-knockoffs with `s = a lambda_min`: the scalar `lambda_max(P) = 1 / lambda_min(Sigma)`.
pub fn esd_equi(c: &CovMatrix) -> Result<EsdReport> {
    c.require_precision()?;
    let raw = 1.0 / c.min_eigenvalue();
    Ok(EsdReport {
        procedure: EsdProcedure::Equi,
        values: vec![raw],
        scale: 1.0,
        lp: raw.min(1.0),
        raw: Some(raw),
    })
}

/// CI-knockoffs on a tree: `(P_jj^2 Sigma_jj)_j`, cross-checked against the
/// first block of the explicit extended precision.
pub fn esd_ci_tree(c: &CovMatrix, scale: f64) -> Result<EsdReport> {
    let precision = c.require_precision()?;
    if linalg::forest_edges(precision, 1e-8).is_none() {
        return Err(Error::NotForest("its support contains a cycle".into()));
    }
    let p = c.dim();
    let values: Vec<f64> = (0..p).map(|j| precision[(j, j)].powi(2) * c.sigma()[(j, j)]).collect();

    let spec = KnockoffSpec::for_mechanism(c, Mechanism::Ci)?;
    let explicit = spec.extended_precision_diagonal()?;
    for (j, &v) in values.iter().enumerate() {
        let gap = (v - explicit[j]).abs();
        if gap > CI_CROSS_CHECK_TOL * v.abs().max(1.0) {
            return Err(Error::NotForest(format!(
                "closed-form diagonal {v} disagrees with the extended precision {} at {j}",
                explicit[j]
            )));
        }
    }
    EsdReport::from_values(EsdProcedure::CiTree, values, scale)
}

/// Diagonal of the extended precision for CI knockoffs (closed form on trees).
pub fn ci_tree_diagonal(c: &CovMatrix) -> Result<DVector<f64>> {
    let precision = c.require_precision()?;
    Ok(DVector::from_fn(c.dim(), |j, _| {
        precision[(j, j)].powi(2) * c.sigma()[(j, j)]
    }))
}
