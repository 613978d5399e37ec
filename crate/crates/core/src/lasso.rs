//! Lasso by cyclic coordinate descent, the debiased estimator, and k-fold
//! cross-validation of the penalty.
//!
//! The objective is `(1/2n) ||y - A theta||^2 + lambda ||theta||_1`. The
//! solver works on the Gram matrix `A^T A / n` and keeps the gradient
//! `A^T (y - A theta) / n` up to date, so a coordinate update costs `O(m)`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Coefficients below this magnitude count as zero in the support size.
pub const ZERO_COEF_TOL: f64 = 1e-10;
/// KKT slack accepted at exit.
pub const KKT_TOL: f64 = 1e-6;

/// A CV fold path stops once the training fit explains this fraction of
/// `||y||^2`, once its support reaches the training size, or once a step
/// down the grid gains less than [`CV_MIN_GAIN`] relative.
pub const CV_SATURATION: f64 = 0.999;
pub const CV_MIN_GAIN: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    /// Stop once a full sweep moves no coordinate by more than this.
    pub tol: f64,
    /// Cap on coordinate-descent sweeps.
    pub max_iter: usize,
    /// Stopping tolerance for the fold fits inside cross-validation, which
    /// only feed prediction errors; relative to `||y|| / sqrt(n)`.
    pub cv_tol: f64,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            tol: 1e-8,
            max_iter: 100_000,
            cv_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LassoFit {
    pub coef: DVector<f64>,
    /// Filled by [`LassoFit::with_debiased`].
    pub debiased: Option<DVector<f64>>,
    pub lambda: f64,
    pub support_size: usize,
    /// `d` with `1/d = 1 - support_size / n`; `None` when `support_size >= n`.
    pub d_factor: Option<f64>,
    pub objective: f64,
    pub sweeps: usize,
    /// Largest KKT violation at exit.
    pub kkt_residual: f64,
    /// False when the sweep cap was hit or the KKT check failed.
    pub converged: bool,
}

impl LassoFit {
    pub fn dim(&self) -> usize {
        self.coef.len()
    }

    /// Computes and stores the debiased coefficients.
    pub fn with_debiased(mut self, a: &DMatrix<f64>, y: &DVector<f64>, precision: &DMatrix<f64>) -> Result<Self> {
        self.debiased = Some(debias(&self, a, y, precision)?);
        Ok(self)
    }
}

fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

fn check_dims(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::InvalidArgument(
            "design must have at least one row and one column".into(),
        ));
    }
    if a.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows but response has length {}",
            a.nrows(),
            y.len()
        )));
    }
    Ok(())
}

/// Sufficient statistics of a least-squares problem.
#[derive(Debug, Clone)]
pub struct GramProblem {
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
}

struct CdOutcome {
    coef: DVector<f64>,
    sweeps: usize,
    hit_cap: bool,
}

impl GramProblem {
    pub fn new(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        check_dims(a, y)?;
        let n = a.nrows() as f64;
        Ok(GramProblem {
            gram: a.tr_mul(a) / n,
            xty: a.tr_mul(y) / n,
            yty: y.dot(y) / n,
        })
    }

    fn from_raw(gram: DMatrix<f64>, xty: DVector<f64>, yty: f64) -> Self {
        GramProblem { gram, xty, yty }
    }

    pub fn dim(&self) -> usize {
        self.xty.len()
    }

    /// `(1/n) ||A^T y||_inf`: the smallest penalty with an all-zero solution.
    pub fn lambda_max(&self) -> f64 {
        self.xty.amax()
    }

    fn objective(&self, coef: &DVector<f64>, grad: &DVector<f64>, lambda: f64) -> f64 {
        // theta^T G theta = theta^T (xty - grad)
        -0.5 * coef.dot(&(&self.xty + grad)) + 0.5 * self.yty + lambda * coef.lp_norm(1)
    }

    fn full_sweep(&self, coef: &mut DVector<f64>, grad: &mut DVector<f64>, lambda: f64) -> f64 {
        let mut max_change = 0.0_f64;
        for j in 0..self.dim() {
            let g_jj = self.gram[(j, j)];
            if g_jj <= 0.0 {
                continue;
            }
            let old = coef[j];
            let new = soft_threshold(grad[j] + g_jj * old, lambda) / g_jj;
            let delta = new - old;
            if delta != 0.0 {
                coef[j] = new;
                grad.axpy(-delta, &self.gram.column(j), 1.0);
                max_change = max_change.max(delta.abs());
            }
        }
        max_change
    }

    /// Sweeps `active` only; the gradient stays current on `active` and goes stale elsewhere.
    fn active_sweep(&self, active: &[usize], coef: &mut DVector<f64>, grad: &mut DVector<f64>, lambda: f64) -> f64 {
        let mut max_change = 0.0_f64;
        for &j in active {
            let g_jj = self.gram[(j, j)];
            let old = coef[j];
            let new = soft_threshold(grad[j] + g_jj * old, lambda) / g_jj;
            let delta = new - old;
            if delta != 0.0 {
                coef[j] = new;
                let column = self.gram.column(j);
                for &k in active {
                    grad[k] -= delta * column[k];
                }
                max_change = max_change.max(delta.abs());
            }
        }
        max_change
    }

    fn gradient(&self, coef: &DVector<f64>) -> DVector<f64> {
        let mut grad = self.xty.clone();
        for (j, &c) in coef.iter().enumerate() {
            if c != 0.0 {
                grad.axpy(-c, &self.gram.column(j), 1.0);
            }
        }
        grad
    }

    fn solve(&self, lambda: f64, warm: Option<&DVector<f64>>, opts: &LassoOptions) -> CdOutcome {
        let m = self.dim();
        let mut coef = warm.cloned().unwrap_or_else(|| DVector::zeros(m));
        let mut grad = self.gradient(&coef);
        let mut sweeps = 0;
        let mut last_objective = f64::INFINITY;

        let mut track = |coef: &DVector<f64>, grad: &DVector<f64>| {
            if cfg!(debug_assertions) {
                let obj = self.objective(coef, grad, lambda);
                debug_assert!(
                    obj <= last_objective + 1e-10 * last_objective.abs().max(1.0),
                    "objective increased from {last_objective} to {obj}"
                );
                last_objective = obj;
            }
        };

        loop {
            let change = self.full_sweep(&mut coef, &mut grad, lambda);
            sweeps += 1;
            track(&coef, &grad);
            if change < opts.tol {
                return CdOutcome {
                    coef,
                    sweeps,
                    hit_cap: false,
                };
            }
            if sweeps >= opts.max_iter {
                return CdOutcome {
                    coef,
                    sweeps,
                    hit_cap: true,
                };
            }
            let active: Vec<usize> = (0..m).filter(|&j| coef[j] != 0.0).collect();
            loop {
                let change = self.active_sweep(&active, &mut coef, &mut grad, lambda);
                sweeps += 1;
                track(&coef, &grad);
                if change < opts.tol {
                    break;
                }
                if sweeps >= opts.max_iter {
                    return CdOutcome {
                        coef,
                        sweeps,
                        hit_cap: true,
                    };
                }
            }
            grad = self.gradient(&coef);
        }
    }

    /// `1 - RSS / ||y||^2` of the training fit.
    fn explained_fraction(&self, coef: &DVector<f64>) -> f64 {
        if self.yty <= 0.0 {
            return 1.0;
        }
        // RSS / n = yty - 2 theta^T xty + theta^T G theta
        let rss = self.yty - 2.0 * coef.dot(&self.xty) + coef.dot(&(&self.gram * coef));
        1.0 - rss / self.yty
    }

    /// Test-set sum of squared residuals for a coefficient vector.
    fn sse(a_rows: &DMatrix<f64>, y: &DVector<f64>, coef: &DVector<f64>) -> f64 {
        let mut pred = DVector::zeros(a_rows.nrows());
        for (j, &c) in coef.iter().enumerate() {
            if c != 0.0 {
                pred.axpy(c, &a_rows.column(j), 1.0);
            }
        }
        (y - pred).norm_squared()
    }
}

/// A design and response with their Gram statistics, reused across fits.
#[derive(Debug, Clone)]
pub struct LassoProblem<'a> {
    a: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    gram: GramProblem,
}

impl<'a> LassoProblem<'a> {
    pub fn new(a: &'a DMatrix<f64>, y: &'a DVector<f64>) -> Result<Self> {
        Ok(LassoProblem {
            a,
            y,
            gram: GramProblem::new(a, y)?,
        })
    }

    pub fn lambda_max(&self) -> f64 {
        self.gram.lambda_max()
    }

    /// `len` log-spaced penalties from `lambda_max` down to `lambda_max / ratio`.
    pub fn default_grid(&self, len: usize, ratio: f64) -> Vec<f64> {
        let top = match self.lambda_max() {
            v if v > 0.0 => v,
            _ => 1.0,
        };
        lambda_grid(top, len, ratio)
    }

    pub fn fit(&self, lambda: f64, opts: &LassoOptions) -> Result<LassoFit> {
        self.fit_warm(lambda, None, opts)
    }

    pub fn fit_warm(&self, lambda: f64, warm: Option<&DVector<f64>>, opts: &LassoOptions) -> Result<LassoFit> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and >= 0, got {lambda}"
            )));
        }
        let out = self.gram.solve(lambda, warm, opts);
        Ok(finish_fit(self.a, self.y, out, lambda))
    }

    /// k-fold cross-validation over a descending grid.
    pub fn cv_lambda<R: Rng + ?Sized>(
        &self,
        folds: usize,
        grid: &[f64],
        rng: &mut R,
        opts: &LassoOptions,
    ) -> Result<f64> {
        validate_grid(grid)?;
        let n = self.a.nrows();
        if folds < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 folds, got {folds}")));
        }
        if n < folds {
            return Err(Error::InvalidArgument(format!(
                "n = {n} is smaller than the number of folds {folds}"
            )));
        }
        if grid.len() == 1 {
            return Ok(grid[0]);
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let fold_opts = LassoOptions {
            tol: (opts.cv_tol * self.gram.yty.sqrt()).max(opts.tol),
            ..*opts
        };
        let mut errors = vec![0.0; grid.len()];
        let mut reached = vec![0usize; grid.len()];
        let n_f = n as f64;
        let full_gram = &self.gram.gram * n_f;
        let full_xty = &self.gram.xty * n_f;
        let full_yty = self.gram.yty * n_f;

        for fold in 0..folds {
            let test: Vec<usize> = order.iter().copied().skip(fold).step_by(folds).collect();
            let a_test = self.a.select_rows(&test);
            let y_test = self.y.select_rows(&test);
            let n_train = (n - test.len()) as f64;
            let train = GramProblem::from_raw(
                (&full_gram - a_test.tr_mul(&a_test)) / n_train,
                (&full_xty - a_test.tr_mul(&y_test)) / n_train,
                (full_yty - y_test.norm_squared()) / n_train,
            );
            let mut warm: Option<DVector<f64>> = None;
            let mut last_fraction = 0.0;
            for (k, &lambda) in grid.iter().enumerate() {
                let out = train.solve(lambda, warm.as_ref(), &fold_opts);
                errors[k] += GramProblem::sse(&a_test, &y_test, &out.coef);
                let fraction = train.explained_fraction(&out.coef);
                let support = out.coef.iter().filter(|c| c.abs() >= ZERO_COEF_TOL).count();
                warm = Some(out.coef);
                reached[k] += 1;
                if support as f64 >= n_train - 1.0
                    || fraction >= CV_SATURATION
                    || (k > 0 && fraction - last_fraction < CV_MIN_GAIN * fraction)
                {
                    break;
                }
                last_fraction = fraction;
            }
        }

        // Penalties some fold never reached are not comparable.
        let usable = reached.iter().take_while(|&&r| r == folds).count();
        let mut best = 0;
        for k in 1..usable {
            if errors[k] < errors[best] {
                best = k;
            }
        }
        Ok(grid[best])
    }
}

fn finish_fit(a: &DMatrix<f64>, y: &DVector<f64>, out: CdOutcome, lambda: f64) -> LassoFit {
    let n = a.nrows();
    let coef = out.coef;
    let residual = y - a * &coef;
    let grad = a.tr_mul(&residual) / n as f64;
    let objective = residual.norm_squared() / (2.0 * n as f64) + lambda * coef.lp_norm(1);

    let mut kkt_residual = 0.0_f64;
    for j in 0..coef.len() {
        let violation = if coef[j] != 0.0 {
            (grad[j] - lambda * coef[j].signum()).abs()
        } else {
            (grad[j].abs() - lambda).max(0.0)
        };
        kkt_residual = kkt_residual.max(violation);
    }

    let support_size = coef.iter().filter(|c| c.abs() >= ZERO_COEF_TOL).count();
    let d_factor = (support_size < n).then(|| 1.0 / (1.0 - support_size as f64 / n as f64));
    LassoFit {
        coef,
        debiased: None,
        lambda,
        support_size,
        d_factor,
        objective,
        sweeps: out.sweeps,
        kkt_residual,
        converged: !out.hit_cap && kkt_residual <= KKT_TOL,
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("lambda grid is empty".into()));
    }
    if grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidArgument("lambda grid must be strictly positive".into()));
    }
    if grid.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidArgument("lambda grid must be sorted descending".into()));
    }
    Ok(())
}

/// `len` log-spaced values from `top` down to `top / ratio`.
pub fn lambda_grid(top: f64, len: usize, ratio: f64) -> Vec<f64> {
    if len <= 1 {
        return vec![top];
    }
    let step = ratio.ln() / (len - 1) as f64;
    (0..len).map(|k| top * (-(k as f64) * step).exp()).collect()
}

/// Lasso by cyclic coordinate descent.
pub fn fit_lasso_cd(a: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, opts: &LassoOptions) -> Result<LassoFit> {
    LassoProblem::new(a, y)?.fit(lambda, opts)
}

/// `theta + (d/n) P A^T (y - A theta)` with `1/d = 1 - ||theta||_0 / n`.
pub fn debias(fit: &LassoFit, a: &DMatrix<f64>, y: &DVector<f64>, precision: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_dims(a, y)?;
    let m = fit.dim();
    if a.ncols() != m || precision.nrows() != m || precision.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "fit has dimension {m}, design has {} columns, precision is {}x{}",
            a.ncols(),
            precision.nrows(),
            precision.ncols()
        )));
    }
    let n = a.nrows();
    let d = fit.d_factor.ok_or(Error::SupportTooLarge {
        support: fit.support_size,
        n,
    })?;
    let residual = y - a * &fit.coef;
    let correction = precision * a.tr_mul(&residual) * (d / n as f64);
    Ok(&fit.coef + correction)
}

/// Penalty with the smallest k-fold CV error; ties go to the larger value.
pub fn cv_lambda<R: Rng + ?Sized>(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    folds: usize,
    grid: &[f64],
    rng: &mut R,
) -> Result<f64> {
    LassoProblem::new(a, y)?.cv_lambda(folds, grid, rng, &LassoOptions::default())
}
