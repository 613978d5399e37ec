//! JSON experiment configuration.
//!
//! Parsing is strict: unknown keys are rejected (with a suggestion when the
//! key looks like a known one), and every validation message carries the
//! line of the offending key.
//!
//! Defaults: `lambda_policy` is `{"kind": "cv", "folds": 5}`, `mechanisms` is
//! `["equi", "asdp", "ci"]`, `statistic_mode` is `"debiased"`, `offset` is
//! `0`, and `baseline` is absent.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::filter::{StatisticMode, ThresholdOffset};
use crate::gaussian::{parse_cov_csv, CovModel};
use crate::knockoff::Mechanism;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    BinaryTree {
        p: usize,
        rho: f64,
    },
    /// Either explicit `rho_seq` or random correlations with `g_variance`.
    MarkovChain {
        p: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rho_seq: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        g_variance: Option<f64>,
    },
    /// Path to a CSV covariance, relative to the config file.
    Explicit {
        csv: PathBuf,
    },
}

impl ModelConfig {
    pub fn dim_hint(&self) -> Option<usize> {
        match self {
            ModelConfig::BinaryTree { p, .. } | ModelConfig::MarkovChain { p, .. } => Some(*p),
            ModelConfig::Explicit { .. } => None,
        }
    }
}

fn default_folds() -> usize {
    5
}

fn default_grid_len() -> usize {
    50
}

fn default_grid_ratio() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaPolicy {
    Fixed {
        value: f64,
    },
    /// k-fold CV over `grid_len` log-spaced values from `lambda_max` down to
    /// `lambda_max / grid_ratio`.
    Cv {
        #[serde(default = "default_folds")]
        folds: usize,
        #[serde(default = "default_grid_len")]
        grid_len: usize,
        #[serde(default = "default_grid_ratio")]
        grid_ratio: f64,
    },
}

impl Default for LambdaPolicy {
    fn default() -> Self {
        LambdaPolicy::Cv {
            folds: default_folds(),
            grid_len: default_grid_len(),
            grid_ratio: default_grid_ratio(),
        }
    }
}

/// Oracle-threshold Lasso baseline run alongside the knockoff filters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaselineConfig {
    Fixed {
        t: f64,
    },
    OracleFdp {
        q: f64,
    },
    /// `t = L^(1/4)` with `L` the Lasso ESD at this scale.
    EsdRule {
        scale: f64,
    },
}

fn default_mechanisms() -> Vec<Mechanism> {
    Mechanism::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub n: usize,
    pub k: usize,
    pub amplitude: f64,
    /// Noise standard deviation per unit; the noise variance is `n * sigma^2`.
    pub sigma: f64,
    #[serde(default)]
    pub lambda_policy: LambdaPolicy,
    pub q: f64,
    #[serde(default = "default_mechanisms")]
    pub mechanisms: Vec<Mechanism>,
    #[serde(default)]
    pub statistic_mode: StatisticMode,
    #[serde(default)]
    pub offset: ThresholdOffset,
    pub trials: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineConfig>,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

const TOP_LEVEL_KEYS: &[&str] = &[
    "model",
    "n",
    "k",
    "amplitude",
    "sigma",
    "lambda_policy",
    "q",
    "mechanisms",
    "statistic_mode",
    "offset",
    "trials",
    "seed",
    "baseline",
];

const ALIASES: &[(&str, &str)] = &[
    ("fdr", "q"),
    ("fdr_target", "q"),
    ("target_fdr", "q"),
    ("fdr_level", "q"),
    ("alpha", "q"),
    ("samples", "n"),
    ("n_samples", "n"),
    ("support", "k"),
    ("sparsity", "k"),
    ("signal", "amplitude"),
    ("theta", "amplitude"),
    ("noise", "sigma"),
    ("noise_sd", "sigma"),
    ("lambda", "lambda_policy"),
    ("reps", "trials"),
    ("repetitions", "trials"),
    ("n_trials", "trials"),
    ("rng_seed", "seed"),
    ("mechanism", "mechanisms"),
    ("knockoffs", "mechanisms"),
    ("mode", "statistic_mode"),
    ("statistic", "statistic_mode"),
    ("covariance", "model"),
];

fn suggest(key: &str) -> Option<&'static str> {
    let lower = key.to_ascii_lowercase();
    if let Some((_, target)) = ALIASES.iter().find(|(alias, _)| *alias == lower) {
        return Some(target);
    }
    TOP_LEVEL_KEYS
        .iter()
        .map(|k| (strsim::jaro_winkler(&lower, k), *k))
        .filter(|(score, _)| *score >= 0.8)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| k)
}

/// 1-based line of the first occurrence of `"key"` in the source.
fn key_line(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

fn field_error(text: &str, field: &str, msg: impl AsRef<str>) -> Error {
    match key_line(text, field) {
        Some(line) => Error::Config(format!("line {line}: field `{field}`: {}", msg.as_ref())),
        None => Error::Config(format!("field `{field}`: {}", msg.as_ref())),
    }
}

/// Parses and validates a config file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config_str(&text, base)
}

pub fn parse_config_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<ExperimentConfig> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("line {}: {e}", e.line())))?;
    let object = value
        .as_object()
        .ok_or_else(|| Error::Config("the config must be a JSON object".into()))?;
    for key in object.keys() {
        if !TOP_LEVEL_KEYS.contains(&key.as_str()) {
            let hint = suggest(key)
                .map(|s| format!("; did you mean `{s}`?"))
                .unwrap_or_default();
            return Err(field_error(text, key, format!("unknown key{hint}")));
        }
    }
    let mut cfg: ExperimentConfig =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("line {}: {e}", e.line())))?;
    cfg.base_dir = base_dir.into();
    validate(&cfg, text)?;
    Ok(cfg)
}

fn validate(cfg: &ExperimentConfig, text: &str) -> Result<()> {
    match &cfg.model {
        ModelConfig::BinaryTree { p, rho } => {
            if *p < 1 {
                return Err(field_error(text, "p", "must be at least 1"));
            }
            if !(rho.abs() < 1.0) {
                return Err(field_error(text, "rho", format!("must lie in (-1, 1), got {rho}")));
            }
        }
        ModelConfig::MarkovChain { p, rho_seq, g_variance } => {
            if *p < 1 {
                return Err(field_error(text, "p", "must be at least 1"));
            }
            match (rho_seq, g_variance) {
                (Some(seq), None) => {
                    if seq.len() + 1 != *p {
                        return Err(field_error(
                            text,
                            "rho_seq",
                            format!("needs p - 1 = {} values, got {}", p - 1, seq.len()),
                        ));
                    }
                }
                (None, Some(g)) => {
                    if !(*g >= 0.0 && g.is_finite()) {
                        return Err(field_error(text, "g_variance", format!("must be >= 0, got {g}")));
                    }
                }
                _ => {
                    return Err(field_error(
                        text,
                        "model",
                        "markov_chain needs exactly one of `rho_seq` or `g_variance`",
                    ))
                }
            }
        }
        ModelConfig::Explicit { .. } => {}
    }
    if cfg.n < 2 {
        return Err(field_error(text, "n", format!("must be at least 2, got {}", cfg.n)));
    }
    if cfg.k < 1 {
        return Err(field_error(text, "k", "must be at least 1"));
    }
    if let Some(p) = cfg.model.dim_hint() {
        if cfg.k > p {
            return Err(field_error(
                text,
                "k",
                format!("must not exceed p = {p}, got {}", cfg.k),
            ));
        }
    }
    if !cfg.amplitude.is_finite() {
        return Err(field_error(text, "amplitude", "must be finite"));
    }
    if !(cfg.sigma >= 0.0 && cfg.sigma.is_finite()) {
        return Err(field_error(text, "sigma", format!("must be >= 0, got {}", cfg.sigma)));
    }
    if !(cfg.q > 0.0 && cfg.q < 1.0) {
        return Err(field_error(text, "q", format!("must lie in (0, 1), got {}", cfg.q)));
    }
    if cfg.trials < 1 {
        return Err(field_error(text, "trials", "must be at least 1"));
    }
    if cfg.mechanisms.is_empty() {
        return Err(field_error(text, "mechanisms", "must list at least one mechanism"));
    }
    let mut sorted = cfg.mechanisms.clone();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != cfg.mechanisms.len() {
        return Err(field_error(text, "mechanisms", "contains duplicates"));
    }
    match &cfg.lambda_policy {
        LambdaPolicy::Fixed { value } => {
            if !(*value >= 0.0 && value.is_finite()) {
                return Err(field_error(text, "value", format!("lambda must be >= 0, got {value}")));
            }
        }
        LambdaPolicy::Cv {
            folds,
            grid_len,
            grid_ratio,
        } => {
            if *folds < 2 || *folds > cfg.n {
                return Err(field_error(text, "folds", format!("must lie in [2, n], got {folds}")));
            }
            if *grid_len < 1 {
                return Err(field_error(text, "grid_len", "must be at least 1"));
            }
            if !(*grid_ratio >= 1.0 && grid_ratio.is_finite()) {
                return Err(field_error(
                    text,
                    "grid_ratio",
                    format!("must be >= 1, got {grid_ratio}"),
                ));
            }
        }
    }
    match cfg.baseline {
        Some(BaselineConfig::Fixed { t }) if !(t > 0.0) => {
            return Err(field_error(text, "t", format!("must be positive, got {t}")));
        }
        Some(BaselineConfig::OracleFdp { q }) if !(q > 0.0 && q < 1.0) => {
            return Err(field_error(text, "baseline", format!("q must lie in (0, 1), got {q}")));
        }
        Some(BaselineConfig::EsdRule { scale }) if !(scale > 0.0) => {
            return Err(field_error(text, "scale", format!("must be positive, got {scale}")));
        }
        _ => {}
    }
    Ok(())
}

impl ExperimentConfig {
    /// Resolves the covariance model; random chains draw from the
    /// experiment seed.
    pub fn cov_model(&self) -> Result<CovModel> {
        match &self.model {
            ModelConfig::BinaryTree { p, rho } => Ok(CovModel::BinaryTree { p: *p, rho: *rho }),
            ModelConfig::MarkovChain {
                p, rho_seq: Some(seq), ..
            } => Ok(CovModel::MarkovChain {
                p: *p,
                rho_seq: seq.clone(),
            }),
            ModelConfig::MarkovChain {
                p, g_variance: Some(g), ..
            } => {
                let mut stream = rng::sub_stream(self.seed, "model");
                CovModel::random_markov_chain(*p, *g, &mut stream)
            }
            ModelConfig::MarkovChain { .. } => {
                Err(Error::Config("markov_chain needs `rho_seq` or `g_variance`".into()))
            }
            ModelConfig::Explicit { csv } => {
                let path = self.base_dir.join(csv);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                let matrix = parse_cov_csv(&text)?;
                if self.k > matrix.nrows() {
                    return Err(Error::Config(format!(
                        "field `k`: must not exceed p = {}, got {}",
                        matrix.nrows(),
                        self.k
                    )));
                }
                Ok(CovModel::Explicit { matrix })
            }
        }
    }
}
