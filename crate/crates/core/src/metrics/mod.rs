//! Quality-attribute mathematics used by the evaluation service.

mod cost;
mod distribution;
mod explanation;
mod performance;
mod similarity;

pub use cost::{cost_overhead, CostOverhead};
pub use distribution::{
    cliffs_delta, kl_normalized, ks_statistic, mce, mean_prediction_difference, prediction_change, robustness,
    PredictionChange,
};
pub use explanation::{
    apply_mask, apply_importances, consistency, explanation_deviation, explanation_resilience, kendall_tau_distance,
    mean_abs_distance, normalize_importances, normalize_mask, resize_bilinear, stability,
};
pub use performance::{performance_metrics, ConfusionTotals, PerformanceReport};
pub use similarity::{mae, ssim, SsimParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("original score is zero; percentage change undefined")]
    ZeroOriginal,
    #[error("reference error is zero at position {0}")]
    ZeroReference(usize),
    #[error("q[{0}] is zero where p is positive: divergence is infinite")]
    InfiniteDivergence(usize),
    #[error("not a probability distribution: {0}")]
    NotDistribution(String),
    #[error("need at least {need} summaries, got {got}")]
    TooFewSummaries { need: usize, got: usize },
    #[error("anchor summary is not part of the set")]
    AnchorMissing,
    #[error("image {height}x{width} smaller than window {window}")]
    WindowTooLarge { height: usize, width: usize, window: usize },
    #[error("invalid ssim parameters: {0}")]
    SsimParams(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("ROC AUC undefined: pooled scores contain only one class")]
    DegenerateAuc,
    #[error("zero denominator for {0}")]
    ZeroDenominator(&'static str),
    #[error("non-finite value")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    Median,
    Sup,
    None,
}

/// One evaluated quantity, as persisted and returned by the evaluation service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub name: String,
    pub value: f64,
    pub sample_count: usize,
    pub aggregation: Aggregation,
    pub inputs_digest: String,
    #[serde(default, skip_serializing_if = "std::collections::BTreeMap::is_empty")]
    pub details: std::collections::BTreeMap<String, f64>,
    /// Per-sample values behind an aggregate, kept so later metrics
    /// (resilience, stability, Cliff's delta) can be recomputed from the artifact.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_sample: Option<Vec<f64>>,
}

impl MetricValue {
    pub fn new(name: impl Into<String>, value: f64, sample_count: usize, aggregation: Aggregation) -> Self {
        Self {
            name: name.into(),
            value,
            sample_count,
            aggregation,
            inputs_digest: String::new(),
            details: Default::default(),
            per_sample: None,
        }
    }
}

pub fn mean(values: &[f64]) -> Result<f64, MetricError> {
    if values.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Median; even-length inputs average the two central values.
pub fn median(values: &[f64]) -> Result<f64, MetricError> {
    if values.is_empty() {
        return Err(MetricError::Empty);
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(MetricError::NonFinite);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]).unwrap(), 2.5);
        assert_eq!(median(&[]), Err(MetricError::Empty));
    }
}
