//! Dense symmetric matrix helpers shared by the covariance, knockoff and
//! diagnostics modules.

use nalgebra::DMatrix;
use petgraph::unionfind::UnionFind;

use crate::error::{Error, Result};

/// Relative tolerance used for symmetry checks.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Pivots in `[-PSD_TOL * max|m|, PSD_TOL * max|m|]` are clamped to zero.
pub const PSD_TOL: f64 = 1e-10;
/// Strict positive definiteness requires every pivot above this fraction of `max|m|`.
pub const SPD_PIVOT_TOL: f64 = 1e-12;

/// Lower-triangular factor of a positive semidefinite matrix.
#[derive(Debug, Clone)]
pub struct PsdFactor {
    pub l: DMatrix<f64>,
    /// Smallest pivot before clamping (the squared diagonal of `l`).
    pub min_pivot: f64,
    /// Number of pivots clamped to zero.
    pub clamped: usize,
}

impl PsdFactor {
    pub fn is_definite(&self, scale: f64) -> bool {
        self.clamped == 0 && self.min_pivot > SPD_PIVOT_TOL * scale
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let asymmetry = max_asymmetry(m);
    if asymmetry > SYMMETRY_TOL * max_abs(m).max(1.0) {
        return Err(Error::NotSymmetric { asymmetry });
    }
    Ok(())
}

/// Semidefinite Cholesky factorization `m = l * l^T`.
///
/// Right-looking, column-major. A pivot below `-PSD_TOL * max|m|` rejects the
/// matrix; pivots within the tolerance band are clamped to zero, in which case
/// the remainder of that column must vanish too.
pub fn cholesky_psd(m: &DMatrix<f64>) -> Result<PsdFactor> {
    check_symmetric(m)?;
    let n = m.nrows();
    let scale = max_abs(m);
    let tol = PSD_TOL * scale;
    let column_tol = 2e-5 * scale;

    // Work on the lower triangle only.
    let mut a = m.clone();
    let mut min_pivot = f64::INFINITY;
    let mut clamped = 0;
    let data = a.as_mut_slice();

    for j in 0..n {
        let pivot = data[j + j * n];
        min_pivot = min_pivot.min(pivot);
        if pivot < -tol {
            return Err(Error::NotPsd { index: j, pivot });
        }
        if pivot <= tol {
            clamped += 1;
            for i in (j + 1)..n {
                let r = data[i + j * n];
                if r.abs() > column_tol {
                    return Err(Error::NotPsd {
                        index: j,
                        pivot: -r.abs(),
                    });
                }
                data[i + j * n] = 0.0;
            }
            data[j + j * n] = 0.0;
            continue;
        }
        let root = pivot.sqrt();
        data[j + j * n] = root;
        for i in (j + 1)..n {
            data[i + j * n] /= root;
        }
        let (head, tail) = data.split_at_mut((j + 1) * n);
        let col_j = &head[j * n..];
        for k in (j + 1)..n {
            let factor = col_j[k];
            if factor == 0.0 {
                continue;
            }
            let col_k = &mut tail[(k - j - 1) * n..(k - j) * n];
            for i in k..n {
                col_k[i] -= col_j[i] * factor;
            }
        }
    }

    // Clear the (stale) strict upper triangle.
    for j in 0..n {
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
    if n == 0 {
        min_pivot = 0.0;
    }
    Ok(PsdFactor {
        l: a,
        min_pivot,
        clamped,
    })
}

/// True when `m` passes [`cholesky_psd`].
pub fn is_psd(m: &DMatrix<f64>) -> bool {
    cholesky_psd(m).is_ok()
}

/// Inverse of a strictly positive definite matrix from its factor.
pub fn inverse_from_factor(factor: &PsdFactor, scale: f64) -> Result<DMatrix<f64>> {
    if !factor.is_definite(scale) {
        return Err(Error::Singular {
            min_pivot: factor.min_pivot,
        });
    }
    let n = factor.l.nrows();
    let linv = factor
        .l
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(Error::Singular {
            min_pivot: factor.min_pivot,
        })?;
    Ok(linv.tr_mul(&linv))
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let factor = match cholesky_psd(m) {
        Ok(f) => f,
        Err(Error::NotPsd { pivot, .. }) => return Err(Error::Singular { min_pivot: pivot }),
        Err(e) => return Err(e),
    };
    inverse_from_factor(&factor, max_abs(m))
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut values: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m).first().copied().unwrap_or(f64::NAN)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m).last().copied().unwrap_or(f64::NAN)
}

/// `2 * diag(diag(m)) - m`: flips the signs of the off-diagonal entries.
pub fn flip_off_diagonal(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = -m;
    for j in 0..m.nrows() {
        out[(j, j)] = m[(j, j)];
    }
    out
}

/// Off-diagonal support of `m` (entries above `tol * max|m|`) as an edge
/// list, or `None` when the support graph contains a cycle.
pub fn forest_edges(m: &DMatrix<f64>, tol: f64) -> Option<Vec<(usize, usize)>> {
    let n = m.nrows();
    let cutoff = tol * max_abs(m);
    let mut uf = UnionFind::<usize>::new(n);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if m[(i, j)].abs().max(m[(j, i)].abs()) > cutoff {
                if !uf.union(i, j) {
                    return None;
                }
                edges.push((i, j));
            }
        }
    }
    Some(edges)
}

/// `m[j,j] >= sum_{k != j} |m[j,k]|` for every row.
pub fn is_diagonally_dominant(m: &DMatrix<f64>) -> bool {
    (0..m.nrows()).all(|j| {
        let off: f64 = (0..m.ncols()).filter(|&k| k != j).map(|k| m[(j, k)].abs()).sum();
        m[(j, j)] >= off
    })
}
