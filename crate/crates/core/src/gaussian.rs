//! Structured Gaussian covariance models, their factorizations, sampling of
//! design matrices, and Chow-Liu tree estimation.

use nalgebra::{DMatrix, DVector};
use petgraph::unionfind::UnionFind;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
pub use crate::linalg::cholesky_psd;
use crate::linalg::{self, PsdFactor};

/// Largest accepted `|rho_j|` on a Markov chain edge.
pub const MAX_CHAIN_CORRELATION: f64 = 1.0 - 1e-8;

const UNIT_DIAGONAL_TOL: f64 = 1e-10;

/// A covariance specification.
#[derive(Debug, Clone, PartialEq)]
pub enum CovModel {
    /// Heap-ordered binary tree: node `j` (1-based) has parent `j / 2`, and
    /// every edge carries correlation `rho`.
    BinaryTree {
        p: usize,
        rho: f64,
    },
    /// Path graph with correlation `rho_seq[j]` between nodes `j` and `j + 1`.
    MarkovChain {
        p: usize,
        rho_seq: Vec<f64>,
    },
    Explicit {
        matrix: DMatrix<f64>,
    },
}

impl CovModel {
    pub fn dim(&self) -> usize {
        match self {
            CovModel::BinaryTree { p, .. } | CovModel::MarkovChain { p, .. } => *p,
            CovModel::Explicit { matrix } => matrix.nrows(),
        }
    }

    /// Markov chain with `rho_j = G_j * 1{|G_j| <= 1}`, `G_j ~ N(0, g_variance)`.
    ///
    /// Draws landing on `|rho_j| = 1` are pulled back to
    /// [`MAX_CHAIN_CORRELATION`] so the covariance stays invertible.
    pub fn random_markov_chain<R: Rng + ?Sized>(p: usize, g_variance: f64, rng: &mut R) -> Result<Self> {
        if !(g_variance.is_finite() && g_variance >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "g_variance must be finite and nonnegative, got {g_variance}"
            )));
        }
        let sd = g_variance.sqrt();
        let rho_seq = (0..p.saturating_sub(1))
            .map(|_| {
                let g = sd * rng.sample::<f64, _>(StandardNormal);
                let rho = if g.abs() <= 1.0 { g } else { 0.0 };
                rho.clamp(-MAX_CHAIN_CORRELATION, MAX_CHAIN_CORRELATION)
            })
            .collect();
        Ok(CovModel::MarkovChain { p, rho_seq })
    }

    /// Edges of the generating graph (0-based), for the structured kinds.
    pub fn edges(&self) -> Option<Vec<(usize, usize)>> {
        match self {
            CovModel::BinaryTree { p, .. } => Some((1..*p).map(|j| (j.div_ceil(2) - 1, j)).collect()),
            CovModel::MarkovChain { p, rho_seq } => Some(
                (0..p.saturating_sub(1))
                    .filter(|&j| rho_seq[j] != 0.0)
                    .map(|j| (j, j + 1))
                    .collect(),
            ),
            CovModel::Explicit { .. } => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            CovModel::BinaryTree { p, rho } => {
                if *p < 1 {
                    return Err(Error::InvalidArgument("p must be at least 1".into()));
                }
                if !(rho.abs() < 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "binary tree correlation must lie in (-1, 1), got {rho}"
                    )));
                }
            }
            CovModel::MarkovChain { p, rho_seq } => {
                if *p < 1 {
                    return Err(Error::InvalidArgument("p must be at least 1".into()));
                }
                if rho_seq.len() + 1 != *p {
                    return Err(Error::InvalidArgument(format!(
                        "markov chain with p = {p} needs {} correlations, got {}",
                        p - 1,
                        rho_seq.len()
                    )));
                }
                if let Some((j, r)) = rho_seq
                    .iter()
                    .enumerate()
                    .find(|(_, r)| !(r.abs() <= MAX_CHAIN_CORRELATION))
                {
                    return Err(Error::InvalidArgument(format!(
                        "markov chain correlation rho[{j}] = {r} is too close to (or beyond) +-1"
                    )));
                }
            }
            CovModel::Explicit { matrix } => {
                if matrix.nrows() < 1 {
                    return Err(Error::InvalidArgument("p must be at least 1".into()));
                }
            }
        }
        Ok(())
    }
}

/// Number of edges on the path between heap nodes `i` and `j` (1-based).
fn heap_distance(mut i: usize, mut j: usize) -> i32 {
    let mut d = 0;
    while i != j {
        if i > j {
            i /= 2;
        } else {
            j /= 2;
        }
        d += 1;
    }
    d
}

/// A validated covariance matrix with its factorizations.
#[derive(Debug, Clone)]
pub struct CovMatrix {
    sigma: DMatrix<f64>,
    chol: DMatrix<f64>,
    min_pivot: f64,
    precision: Option<DMatrix<f64>>,
    unit_diagonal: bool,
    scaling: Option<DVector<f64>>,
}

impl CovMatrix {
    /// Validates symmetry and positive semidefiniteness, factors `sigma`, and
    /// computes the precision matrix when `sigma` is nonsingular.
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        if sigma.nrows() < 1 {
            return Err(Error::InvalidArgument("p must be at least 1".into()));
        }
        let factor = cholesky_psd(&sigma)?;
        Self::from_factor(sigma, factor)
    }

    fn from_factor(sigma: DMatrix<f64>, factor: PsdFactor) -> Result<Self> {
        let scale = linalg::max_abs(&sigma);
        let precision = if factor.is_definite(scale) {
            Some(linalg::inverse_from_factor(&factor, scale)?)
        } else {
            None
        };
        let unit_diagonal = sigma.diagonal().iter().all(|d| (d - 1.0).abs() < UNIT_DIAGONAL_TOL);
        Ok(CovMatrix {
            sigma,
            chol: factor.l,
            min_pivot: factor.min_pivot,
            precision,
            unit_diagonal,
            scaling: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    pub fn precision(&self) -> Option<&DMatrix<f64>> {
        self.precision.as_ref()
    }

    /// The precision matrix, or [`Error::Singular`] when `sigma` is singular.
    pub fn require_precision(&self) -> Result<&DMatrix<f64>> {
        self.precision.as_ref().ok_or(Error::Singular {
            min_pivot: self.min_pivot,
        })
    }

    pub fn is_unit_diagonal(&self) -> bool {
        self.unit_diagonal
    }

    /// Standard deviations divided out by [`standardize`], if any.
    pub fn scaling(&self) -> Option<&DVector<f64>> {
        self.scaling.as_ref()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        linalg::min_eigenvalue(&self.sigma)
    }
}

/// Assembles the covariance of a model.
pub fn build_cov(model: &CovModel) -> Result<CovMatrix> {
    model.validate()?;
    let sigma = match model {
        CovModel::BinaryTree { p, rho } => DMatrix::from_fn(*p, *p, |i, j| rho.powi(heap_distance(i + 1, j + 1))),
        CovModel::MarkovChain { p, rho_seq } => {
            let mut sigma = DMatrix::identity(*p, *p);
            for i in 0..*p {
                let mut prod = 1.0;
                for j in (i + 1)..*p {
                    prod *= rho_seq[j - 1];
                    sigma[(i, j)] = prod;
                    sigma[(j, i)] = prod;
                }
            }
            sigma
        }
        CovModel::Explicit { matrix } => matrix.clone(),
    };
    CovMatrix::new(sigma)
}

/// Parses a p x p covariance from CSV text (no header).
pub fn parse_cov_csv(text: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(lineno, line)| {
            line.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Config(format!("line {}: invalid value {:?}: {e}", lineno + 1, v.trim())))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let p = rows.len();
    if p == 0 {
        return Err(Error::Config("covariance CSV is empty".into()));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != p) {
        return Err(Error::Config(format!(
            "covariance CSV row {} has {} values, expected {p}",
            i + 1,
            rows[i].len()
        )));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
}

/// Inverse of a strictly positive definite covariance.
pub fn invert_spd(c: &CovMatrix) -> Result<DMatrix<f64>> {
    c.require_precision().cloned()
}

/// Draws `n` i.i.d. rows from `N(0, sigma)` as `Z * chol^T`.
pub fn sample_mvn<R: Rng + ?Sized>(c: &CovMatrix, n: usize, rng: &mut R) -> DMatrix<f64> {
    let z = standard_normal_matrix(n, c.dim(), rng);
    z * c.chol().transpose()
}

/// `n x p` matrix of standard normals, filled row by row.
pub fn standard_normal_matrix<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            z[(i, j)] = rng.sample(StandardNormal);
        }
    }
    z
}

/// Empirical second-moment matrix `X^T X / n` of zero-mean rows.
pub fn empirical_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.tr_mul(x) / x.nrows() as f64
}

/// Maximum-weight spanning tree under edge weights `-ln(1 - r_ij^2)`.
///
/// Kruskal over edges sorted by descending weight; equal weights keep
/// lexicographic `(i, j)` order. Edges are 0-based with `i < j`.
pub fn chow_liu_tree(sample_cov: &DMatrix<f64>) -> Result<Vec<(usize, usize)>> {
    linalg::check_symmetric(sample_cov)?;
    let p = sample_cov.nrows();
    if p < 2 {
        return Err(Error::InvalidArgument("chow-liu needs p >= 2".into()));
    }
    let mut weighted = Vec::with_capacity(p * (p - 1) / 2);
    for i in 0..p {
        for j in (i + 1)..p {
            let r = sample_cov[(i, j)] / (sample_cov[(i, i)] * sample_cov[(j, j)]).sqrt();
            if !(r.abs() < 1.0) {
                return Err(Error::DegenerateCorrelation { i, j, r });
            }
            weighted.push((-(1.0 - r * r).ln(), i, j));
        }
    }
    // Stable sort keeps the lexicographic order among ties.
    weighted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut uf = UnionFind::<usize>::new(p);
    let mut edges = Vec::with_capacity(p - 1);
    for (_, i, j) in weighted {
        if uf.union(i, j) {
            edges.push((i, j));
            if edges.len() == p - 1 {
                break;
            }
        }
    }
    edges.sort_unstable();
    Ok(edges)
}

/// Rescales to unit diagonal, recording the standard deviations.
pub fn standardize(c: &CovMatrix) -> Result<CovMatrix> {
    let sd: DVector<f64> = c.sigma().diagonal().map(f64::sqrt);
    if let Some(j) = c.sigma().diagonal().iter().position(|&d| !(d > 0.0)) {
        return Err(Error::InvalidArgument(format!("diagonal entry {j} is not positive")));
    }
    let p = c.dim();
    let sigma = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            c.sigma()[(i, j)] / (sd[i] * sd[j])
        }
    });
    let mut out = CovMatrix::new(sigma)?;
    out.scaling = Some(sd);
    Ok(out)
}
