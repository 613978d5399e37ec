//! Knockoff statistics, the data-driven threshold, selection, per-trial
//! error metrics, and the oracle-threshold Lasso baseline.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lasso::LassoFit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatisticMode {
    /// `|u_j| - |u_{j+p}|` on debiased coefficients.
    #[default]
    Debiased,
    /// `|theta_j| - |theta_{j+p}|` on raw Lasso coefficients.
    Lasso,
}

/// Numerator offset of the threshold rule: 0 is the knockoff threshold, 1 is
/// knockoff+.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum ThresholdOffset {
    #[default]
    Zero,
    One,
}

impl ThresholdOffset {
    pub fn value(self) -> usize {
        match self {
            ThresholdOffset::Zero => 0,
            ThresholdOffset::One => 1,
        }
    }
}

impl TryFrom<u8> for ThresholdOffset {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(ThresholdOffset::Zero),
            1 => Ok(ThresholdOffset::One),
            other => Err(format!("offset must be 0 or 1, got {other}")),
        }
    }
}

impl From<ThresholdOffset> for u8 {
    fn from(o: ThresholdOffset) -> u8 {
        o.value() as u8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    pub delta: DVector<f64>,
    /// Sorted distinct nonzero `|delta_j|`.
    pub threshold_set: Vec<f64>,
    /// `+inf` when no candidate meets the budget.
    pub threshold: f64,
    /// Selected indices, ascending.
    pub selected: Vec<usize>,
    pub offset: ThresholdOffset,
}

impl FilterResult {
    pub fn new(delta: DVector<f64>, q: f64, offset: ThresholdOffset) -> Result<Self> {
        let threshold = knockoff_threshold(&delta, q, offset)?;
        let selected = select(&delta, threshold);
        let threshold_set = threshold_set(&delta);
        Ok(FilterResult {
            delta,
            threshold_set,
            threshold,
            selected,
            offset,
        })
    }
}

/// Knockoff statistics from a fit on the augmented `[X, X~]` design.
pub fn statistics_delta(fit: &LassoFit, mode: StatisticMode) -> Result<DVector<f64>> {
    let coef = match mode {
        StatisticMode::Lasso => &fit.coef,
        StatisticMode::Debiased => fit
            .debiased
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("fit has no debiased coefficients".into()))?,
    };
    delta_from_coefficients(coef)
}

pub fn delta_from_coefficients(coef: &DVector<f64>) -> Result<DVector<f64>> {
    if !coef.len().is_multiple_of(2) {
        return Err(Error::DimensionMismatch(format!(
            "augmented fit must have even dimension, got {}",
            coef.len()
        )));
    }
    let p = coef.len() / 2;
    Ok(DVector::from_fn(p, |j, _| coef[j].abs() - coef[j + p].abs()))
}

pub fn threshold_set(delta: &DVector<f64>) -> Vec<f64> {
    let mut set: Vec<f64> = delta.iter().map(|d| d.abs()).filter(|&d| d > 0.0).collect();
    set.sort_by(f64::total_cmp);
    set.dedup();
    set
}

/// `T = min { t in D : (#{delta <= -t} + offset) / max(#{delta >= t}, 1) <= q }`.
pub fn knockoff_threshold(delta: &DVector<f64>, q: f64, offset: ThresholdOffset) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("q must lie in (0, 1), got {q}")));
    }
    let mut sorted: Vec<f64> = delta.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    for t in threshold_set(delta) {
        let negatives = sorted.partition_point(|&d| d <= -t);
        let positives = m - sorted.partition_point(|&d| d < t);
        let ratio = (negatives + offset.value()) as f64 / positives.max(1) as f64;
        if ratio <= q {
            return Ok(t);
        }
    }
    Ok(f64::INFINITY)
}

/// Indices with `delta_j >= threshold`.
pub fn select(delta: &DVector<f64>, threshold: f64) -> Vec<usize> {
    if threshold == f64::INFINITY {
        return Vec::new();
    }
    delta
        .iter()
        .enumerate()
        .filter(|(_, &d)| d >= threshold)
        .map(|(j, _)| j)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialMetrics {
    pub fdp: f64,
    /// `None` when there are no true nonnulls.
    pub tpp: Option<f64>,
    pub n_selected: usize,
    pub n_false: usize,
    pub n_true_nonnull: usize,
}

pub fn trial_metrics(selected: &[usize], theta_true: &DVector<f64>) -> TrialMetrics {
    let n_true_nonnull = theta_true.iter().filter(|t| t.abs() > 0.0).count();
    let n_selected = selected.len();
    let n_false = selected.iter().filter(|&&j| theta_true[j] == 0.0).count();
    let fdp = n_false as f64 / n_selected.max(1) as f64;
    let tpp = (n_true_nonnull > 0).then(|| (n_selected - n_false) as f64 / n_true_nonnull as f64);
    TrialMetrics {
        fdp,
        tpp,
        n_selected,
        n_false,
        n_true_nonnull,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OraclePolicy {
    /// Select `|u_j| >= t`.
    Fixed { t: f64 },
    /// Smallest threshold whose selection has true FDP at most `q`.
    OracleFdp { q: f64 },
    /// `t = L^(1/4)`.
    EsdRule { l: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSelection {
    pub threshold: f64,
    pub selected: Vec<usize>,
    pub metrics: TrialMetrics,
}

/// Thresholded debiased Lasso (no knockoffs) with a threshold from `policy`.
pub fn oracle_threshold_select(
    debiased: &DVector<f64>,
    theta_true: &DVector<f64>,
    policy: OraclePolicy,
) -> Result<OracleSelection> {
    if debiased.len() != theta_true.len() {
        return Err(Error::DimensionMismatch(format!(
            "debiased has length {}, theta has length {}",
            debiased.len(),
            theta_true.len()
        )));
    }
    let magnitude_select = |t: f64| -> Vec<usize> {
        debiased
            .iter()
            .enumerate()
            .filter(|(_, u)| u.abs() >= t)
            .map(|(j, _)| j)
            .collect()
    };
    let threshold = match policy {
        OraclePolicy::Fixed { t } => {
            if !(t > 0.0) {
                return Err(Error::InvalidArgument(format!("threshold must be positive, got {t}")));
            }
            t
        }
        OraclePolicy::EsdRule { l } => {
            if !(l >= 0.0) {
                return Err(Error::InvalidArgument(format!("L must be nonnegative, got {l}")));
            }
            l.powf(0.25)
        }
        OraclePolicy::OracleFdp { q } => {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::InvalidArgument(format!("q must lie in (0, 1), got {q}")));
            }
            let mut candidates: Vec<f64> = debiased.iter().map(|u| u.abs()).collect();
            candidates.sort_by(f64::total_cmp);
            candidates.dedup();
            candidates
                .into_iter()
                .find(|&t| trial_metrics(&magnitude_select(t), theta_true).fdp <= q)
                .unwrap_or(f64::INFINITY)
        }
    };
    let selected = if threshold == f64::INFINITY {
        Vec::new()
    } else {
        magnitude_select(threshold)
    };
    let metrics = trial_metrics(&selected, theta_true);
    Ok(OracleSelection {
        threshold,
        selected,
        metrics,
    })
}
