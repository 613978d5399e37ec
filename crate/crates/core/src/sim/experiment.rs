//! Trial generation and the Monte Carlo loop.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::esd::esd_lasso;
use crate::filter::{self, FilterResult, OraclePolicy, StatisticMode};
use crate::gaussian::{build_cov, sample_mvn, CovMatrix, CovModel};
use crate::knockoff::{sample_knockoffs, KnockoffSpec, Mechanism};
use crate::lasso::{LassoFit, LassoOptions, LassoProblem};
use crate::rng;
use crate::sim::config::{BaselineConfig, ExperimentConfig, LambdaPolicy};

/// Label of the oracle-threshold Lasso baseline rows.
pub const BASELINE_LABEL: &str = "oracle_lasso";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub mechanism: String,
    pub q: f64,
    pub fdp: f64,
    pub tpp: Option<f64>,
    pub n_selected: usize,
    #[serde(rename = "T")]
    pub threshold: f64,
    pub lambda_used: f64,
    pub seed_stream: u64,
    /// FNV-1a digest of the design `X` this record was fitted on.
    pub x_digest: u64,
    pub lasso_converged: bool,
}

struct PreparedMechanism {
    mechanism: Mechanism,
    spec: KnockoffSpec,
    extended_precision: DMatrix<f64>,
}

/// Everything that is fixed across trials.
pub struct Experiment {
    cfg: ExperimentConfig,
    model: CovModel,
    cov: CovMatrix,
    mechanisms: Vec<PreparedMechanism>,
    baseline: Option<OraclePolicy>,
    opts: LassoOptions,
}

fn digest(x: &DMatrix<f64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in x.iter() {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

impl Experiment {
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        let model = cfg.cov_model()?;
        let cov = build_cov(&model)?;
        if cfg.k > cov.dim() {
            return Err(Error::Config(format!(
                "field `k`: must not exceed p = {}, got {}",
                cov.dim(),
                cfg.k
            )));
        }
        cov.require_precision()?;
        let mut mechanisms = Vec::with_capacity(cfg.mechanisms.len());
        for &mechanism in &cfg.mechanisms {
            let spec = KnockoffSpec::for_mechanism(&cov, mechanism)?;
            let extended_precision = spec.extended_precision()?;
            mechanisms.push(PreparedMechanism {
                mechanism,
                spec,
                extended_precision,
            });
        }
        let baseline = match cfg.baseline {
            None => None,
            Some(BaselineConfig::Fixed { t }) => Some(OraclePolicy::Fixed { t }),
            Some(BaselineConfig::OracleFdp { q }) => Some(OraclePolicy::OracleFdp { q }),
            Some(BaselineConfig::EsdRule { scale }) => Some(OraclePolicy::EsdRule {
                l: esd_lasso(&cov, scale)?.lp,
            }),
        };
        Ok(Experiment {
            cfg: cfg.clone(),
            model,
            cov,
            mechanisms,
            baseline,
            opts: LassoOptions::default(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn model(&self) -> &CovModel {
        &self.model
    }

    pub fn cov(&self) -> &CovMatrix {
        &self.cov
    }

    pub fn spec(&self, mechanism: Mechanism) -> Option<&KnockoffSpec> {
        self.mechanisms
            .iter()
            .find(|m| m.mechanism == mechanism)
            .map(|m| &m.spec)
    }

    fn choose_lambda(&self, problem: &LassoProblem<'_>, stream_label: &str, seed: u64) -> Result<f64> {
        match self.cfg.lambda_policy {
            LambdaPolicy::Fixed { value } => Ok(value),
            LambdaPolicy::Cv {
                folds,
                grid_len,
                grid_ratio,
            } => {
                let grid = problem.default_grid(grid_len, grid_ratio);
                let mut stream = rng::sub_stream(seed, stream_label);
                problem.cv_lambda(folds, &grid, &mut stream, &self.opts)
            }
        }
    }

    fn fit(&self, a: &DMatrix<f64>, y: &DVector<f64>, label: &str, seed: u64) -> Result<LassoFit> {
        let problem = LassoProblem::new(a, y)?;
        let lambda = self.choose_lambda(&problem, &format!("cv:{label}"), seed)?;
        problem.fit(lambda, &self.opts)
    }

    /// One record per mechanism, plus the baseline when configured.
    pub fn run_trial(&self, trial: usize) -> Result<Vec<TrialRecord>> {
        let cfg = &self.cfg;
        let seed = rng::trial_seed(cfg.seed, trial as u64);
        let p = self.cov.dim();
        let n = cfg.n;

        let mut support_stream = rng::sub_stream(seed, "support");
        let mut theta = DVector::zeros(p);
        for j in index::sample(&mut support_stream, p, cfg.k) {
            theta[j] = cfg.amplitude;
        }
        let x = sample_mvn(&self.cov, n, &mut rng::sub_stream(seed, "design"));
        let mut noise_stream = rng::sub_stream(seed, "noise");
        let noise_sd = cfg.sigma * (n as f64).sqrt();
        let y = &x * &theta
            + DVector::from_fn(n, |_, _| {
                let z: f64 = StandardNormal.sample(&mut noise_stream);
                noise_sd * z
            });
        let x_digest = digest(&x);

        let mut records = Vec::with_capacity(self.mechanisms.len() + 1);
        for prepared in &self.mechanisms {
            let label = prepared.mechanism.as_str();
            let mut ko_stream = rng::sub_stream(seed, &format!("knockoff:{label}"));
            let x_tilde = sample_knockoffs(&prepared.spec, &x, &mut ko_stream)?;
            let mut a = DMatrix::zeros(n, 2 * p);
            a.columns_mut(0, p).copy_from(&x);
            a.columns_mut(p, p).copy_from(&x_tilde);

            let mut fit = self.fit(&a, &y, label, seed)?;
            if cfg.statistic_mode == StatisticMode::Debiased {
                fit = fit.with_debiased(&a, &y, &prepared.extended_precision)?;
            }
            let delta = filter::statistics_delta(&fit, cfg.statistic_mode)?;
            let result = FilterResult::new(delta, cfg.q, cfg.offset)?;
            let metrics = filter::trial_metrics(&result.selected, &theta);
            records.push(TrialRecord {
                trial,
                mechanism: label.to_string(),
                q: cfg.q,
                fdp: metrics.fdp,
                tpp: metrics.tpp,
                n_selected: metrics.n_selected,
                threshold: result.threshold,
                lambda_used: fit.lambda,
                seed_stream: seed,
                x_digest,
                lasso_converged: fit.converged,
            });
        }

        if let Some(policy) = self.baseline {
            let fit = self.fit(&x, &y, BASELINE_LABEL, seed)?;
            let fit = fit.with_debiased(&x, &y, self.cov.require_precision()?)?;
            let debiased = fit.debiased.as_ref().expect("debiased coefficients were just computed");
            let oracle = filter::oracle_threshold_select(debiased, &theta, policy)?;
            records.push(TrialRecord {
                trial,
                mechanism: BASELINE_LABEL.to_string(),
                q: cfg.q,
                fdp: oracle.metrics.fdp,
                tpp: oracle.metrics.tpp,
                n_selected: oracle.metrics.n_selected,
                threshold: oracle.threshold,
                lambda_used: fit.lambda,
                seed_stream: seed,
                x_digest,
                lasso_converged: fit.converged,
            });
        }
        records.sort_by(|a, b| a.mechanism.cmp(&b.mechanism));
        Ok(records)
    }

    /// Runs every trial on `workers` threads; output order does not depend on
    /// scheduling.
    pub fn run(&self, workers: usize) -> Result<ExperimentOutput> {
        if workers == 0 {
            return Err(Error::InvalidArgument("workers must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
        let results: Vec<Result<Vec<TrialRecord>>> = pool.install(|| {
            (0..self.cfg.trials)
                .into_par_iter()
                .map(|t| self.run_trial(t))
                .collect()
        });
        let mut records = Vec::with_capacity(results.len() * (self.mechanisms.len() + 1));
        for (trial, result) in results.into_iter().enumerate() {
            match result {
                Ok(rs) => records.extend(rs),
                Err(source) => {
                    return Err(Error::Trial {
                        trial,
                        source: Box::new(source),
                    })
                }
            }
        }
        let summary = summarize(&records);
        Ok(ExperimentOutput { records, summary })
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    /// Sorted by `(trial, mechanism)`.
    pub records: Vec<TrialRecord>,
    pub summary: Vec<MechanismSummary>,
}

impl ExperimentOutput {
    pub fn summary_for(&self, mechanism: &str) -> Option<&MechanismSummary> {
        self.summary.iter().find(|s| s.mechanism == mechanism)
    }
}

/// Location and spread of one metric across trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricSummary {
    pub count: usize,
    pub mean: f64,
    /// Standard error of the mean.
    pub se: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl MetricSummary {
    pub fn from_values(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return MetricSummary {
                count,
                mean: f64::NAN,
                se: f64::NAN,
                q1: f64::NAN,
                median: f64::NAN,
                q3: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let se = if count > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
            (var / count as f64).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        MetricSummary {
            count,
            mean,
            se,
            q1: quantile(&sorted, 0.25),
            median: quantile(&sorted, 0.5),
            q3: quantile(&sorted, 0.75),
        }
    }
}

/// Linear-interpolation quantile of sorted data (R type 7).
pub fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MechanismSummary {
    pub mechanism: String,
    pub fdp: MetricSummary,
    pub tpp: MetricSummary,
    pub mean_selected: f64,
}

pub fn summarize(records: &[TrialRecord]) -> Vec<MechanismSummary> {
    let mut labels: Vec<&str> = records.iter().map(|r| r.mechanism.as_str()).collect();
    labels.sort_unstable();
    labels.dedup();
    labels
        .into_iter()
        .map(|label| {
            let rows: Vec<&TrialRecord> = records.iter().filter(|r| r.mechanism == label).collect();
            let fdp: Vec<f64> = rows.iter().map(|r| r.fdp).collect();
            let tpp: Vec<f64> = rows.iter().filter_map(|r| r.tpp).collect();
            let mean_selected = rows.iter().map(|r| r.n_selected as f64).sum::<f64>() / rows.len() as f64;
            MechanismSummary {
                mechanism: label.to_string(),
                fdp: MetricSummary::from_values(&fdp),
                tpp: MetricSummary::from_values(&tpp),
                mean_selected,
            }
        })
        .collect()
}

/// Prepares and runs an experiment.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<ExperimentOutput> {
    Experiment::prepare(cfg)?.run(workers)
}
