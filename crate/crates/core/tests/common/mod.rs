//! Random instance generators shared by the integration suites.
#![allow(dead_code)]

use knockoff_esd::gaussian::CovMatrix;
use knockoff_esd::rng::Stream;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

/// Uniform random labelled tree: node `j` attaches to a uniform earlier node,
/// then labels are shuffled.
pub fn random_tree(p: usize, rng: &mut Stream) -> Vec<(usize, usize)> {
    let mut labels: Vec<usize> = (0..p).collect();
    labels.shuffle(rng);
    (1..p)
        .map(|j| {
            let parent = rng.random_range(0..j);
            let (a, b) = (labels[parent], labels[j]);
            (a.min(b), a.max(b))
        })
        .collect()
}

/// Random forest: a random tree with each edge kept with probability `keep`.
pub fn random_forest(p: usize, keep: f64, rng: &mut Stream) -> Vec<(usize, usize)> {
    random_tree(p, rng)
        .into_iter()
        .filter(|_| rng.random::<f64>() < keep)
        .collect()
}

/// Symmetric matrix with arbitrary diagonal and nonzero entries exactly on `edges`.
pub fn patterned_symmetric(p: usize, edges: &[(usize, usize)], rng: &mut Stream) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(p, p);
    for j in 0..p {
        m[(j, j)] = rng.random_range(-3.0..3.0);
    }
    for &(a, b) in edges {
        let mut v: f64 = rng.random_range(-2.0..2.0);
        if v.abs() < 1e-3 {
            v = 1.0;
        }
        m[(a, b)] = v;
        m[(b, a)] = v;
    }
    m
}

/// Unit-diagonal tree covariance: `Sigma_ij` is the product of the edge
/// correlations along the path from `i` to `j`; each `|rho_e|` is uniform on
/// `[min_rho, max_rho)` with a random sign.
pub fn tree_covariance(
    p: usize,
    edges: &[(usize, usize)],
    min_rho: f64,
    max_rho: f64,
    rng: &mut Stream,
) -> DMatrix<f64> {
    let mut adjacency = vec![Vec::new(); p];
    for &(a, b) in edges {
        let mut r = rng.random_range(min_rho..max_rho);
        if rng.random::<bool>() {
            r = -r;
        }
        adjacency[a].push((b, r));
        adjacency[b].push((a, r));
    }
    let mut sigma = DMatrix::zeros(p, p);
    for root in 0..p {
        let mut stack = vec![(root, usize::MAX, 1.0)];
        while let Some((node, from, corr)) = stack.pop() {
            sigma[(root, node)] = corr;
            for &(next, r) in &adjacency[node] {
                if next != from {
                    stack.push((next, node, corr * r));
                }
            }
        }
    }
    sigma
}

/// Strictly diagonally dominant precision with a random sparse pattern;
/// returns its inverse as a covariance.
pub fn diagonally_dominant_covariance(p: usize, density: f64, rng: &mut Stream) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut prec = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..i {
            if rng.random::<f64>() < density {
                let v: f64 = rng.random_range(-1.0..1.0);
                prec[(i, j)] = v;
                prec[(j, i)] = v;
            }
        }
    }
    for j in 0..p {
        let off: f64 = (0..p).filter(|&k| k != j).map(|k| prec[(j, k)].abs()).sum();
        prec[(j, j)] = off + rng.random_range(0.05..1.0);
    }
    let sigma = prec
        .clone()
        .try_inverse()
        .expect("diagonally dominant matrices are invertible");
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    (sigma, prec)
}

pub fn cov(sigma: DMatrix<f64>) -> CovMatrix {
    CovMatrix::new(sigma).expect("valid covariance")
}

pub fn normal_matrix(n: usize, m: usize, rng: &mut Stream) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| rng.sample(StandardNormal))
}

pub fn normal_vector(n: usize, rng: &mut Stream) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Brute-force `lp` distance: the smallest candidate `c` in
/// `{0} ∪ {v_j} ∪ {k/m}` such that every `eps > c` is feasible, which holds
/// iff `#{v > c} / m <= c`.
pub fn lp_oracle(values: &[f64]) -> f64 {
    let m = values.len();
    let strictly_above = |c: f64| values.iter().filter(|&&v| v > c).count() as f64 / m as f64;
    let mut candidates: Vec<f64> = vec![0.0];
    candidates.extend_from_slice(values);
    candidates.extend((0..=m).map(|k| k as f64 / m as f64));
    candidates.sort_by(f64::total_cmp);
    candidates
        .into_iter()
        .find(|&c| strictly_above(c) <= c)
        .expect("1 is always a valid candidate")
}

/// Spectrum of a symmetric matrix, ascending.
pub fn spectrum(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}
