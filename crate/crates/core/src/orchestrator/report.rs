//! Quality report, radar normalisation and heatmap grid.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::PipelineConfig;
use super::execute::StepOutput;
use super::plan::variant_labels;
use crate::provenance::{ProvenanceLog, RunStatus};
use crate::store::ArtifactRef;

/// One (dataset, model, algorithm, perturbation) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub model: String,
    #[serde(default)]
    pub algorithm: Option<String>,
    /// Perturbation label; `None` for the clean dataset.
    #[serde(default)]
    pub perturbation: Option<String>,
    /// Time overhead of the explainer, percent.
    #[serde(default)]
    pub cost: Option<f64>,
    #[serde(default)]
    pub energy_overhead: Option<f64>,
    /// Micro-averaged F1.
    #[serde(default)]
    pub performance: Option<f64>,
    #[serde(default)]
    pub deviation: Option<f64>,
    /// Median prediction change, as a fraction of the original score.
    #[serde(default)]
    pub prediction_change: Option<f64>,
    /// K-S statistic between clean and perturbed top-1 probabilities.
    #[serde(default)]
    pub ks: Option<f64>,
    #[serde(default)]
    pub resilience: Option<f64>,
    /// Metric artifact behind each populated attribute.
    #[serde(default)]
    pub artifacts: BTreeMap<String, ArtifactRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub dataset: String,
    pub model: String,
    pub kind: String,
    pub variants: Vec<String>,
    pub value: f64,
    pub artifact: ArtifactRef,
}

/// Per-model aggregates that feed the radar chart.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelAttributes {
    pub model: String,
    #[serde(default)]
    pub cost: Option<f64>,
    #[serde(default)]
    pub performance: Option<f64>,
    #[serde(default)]
    pub deviation: Option<f64>,
    #[serde(default)]
    pub robustness: Option<f64>,
    #[serde(default)]
    pub resilience: Option<f64>,
}

impl ModelAttributes {
    pub fn get(&self, a: Attribute) -> Option<f64> {
        match a {
            Attribute::Cost => self.cost,
            Attribute::Performance => self.performance,
            Attribute::Deviation => self.deviation,
            Attribute::Robustness => self.robustness,
            Attribute::Resilience => self.resilience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub run_id: String,
    pub config_digest: String,
    pub status: RunStatus,
    #[serde(default)]
    pub failed_step: Option<String>,
    pub rows: Vec<ReportRow>,
    pub robustness: Vec<RobustnessRow>,
    pub models: Vec<ModelAttributes>,
    #[serde(default)]
    pub skipped: Vec<String>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn build_report(
    cfg: &PipelineConfig,
    log: &ProvenanceLog,
    outputs: &BTreeMap<String, StepOutput>,
    skipped: &[String],
) -> QualityReport {
    let labels = variant_labels(cfg.perturbations()).unwrap_or_default();
    let metric = |id: String| match outputs.get(&id) {
        Some(StepOutput::Metric { value, artifact }) => Some((value.clone(), artifact.clone())),
        _ => None,
    };
    let mut rows = Vec::new();
    let mut robustness = Vec::new();
    for (ds, entry) in &cfg.xai_config.datasets {
        let algorithms: Vec<Option<&String>> = if entry.algorithms.is_empty() {
            vec![None]
        } else {
            entry.algorithms.iter().map(Some).collect()
        };
        for m in entry.models() {
            for a in &algorithms {
                for v in std::iter::once(None).chain(labels.iter().map(Some)) {
                    let path = match v {
                        Some(v) => format!("{ds}/{v}"),
                        None => ds.clone(),
                    };
                    let mut row = ReportRow {
                        dataset: ds.clone(),
                        model: m.clone(),
                        algorithm: a.cloned(),
                        perturbation: v.cloned(),
                        cost: None,
                        energy_overhead: None,
                        performance: None,
                        deviation: None,
                        prediction_change: None,
                        ks: None,
                        resilience: None,
                        artifacts: BTreeMap::new(),
                    };
                    let mut put = |attr: &str, id: String| {
                        metric(id).map(|(value, artifact)| {
                            row.artifacts.insert(attr.into(), artifact);
                            value
                        })
                    };
                    if v.is_none() {
                        row.performance = put("performance", format!("eval/performance/{m}/{ds}")).map(|x| x.value);
                        if let Some(a) = a {
                            if let Some(c) = put("cost", format!("eval/cost/{a}/{m}/{ds}")) {
                                row.cost = c.details.get("r_time").copied();
                                row.energy_overhead = c.details.get("r_energy").copied();
                            }
                        }
                    } else {
                        row.ks = put("ks", format!("eval/ks/{m}/{path}")).map(|x| x.value);
                        if let Some(a) = a {
                            row.resilience = put("resilience", format!("eval/resilience/{a}/{m}/{path}")).map(|x| x.value);
                        }
                    }
                    if let Some(a) = a {
                        row.deviation = put("deviation", format!("eval/deviation/{a}/{m}/{path}")).map(|x| x.value);
                        row.prediction_change =
                            put("prediction_change", format!("eval/prediction_change/{a}/{m}/{path}")).map(|x| x.value);
                    }
                    rows.push(row);
                }
            }
            let mut kinds: Vec<(String, Vec<String>)> = Vec::new();
            for (spec, label) in cfg.perturbations().iter().zip(&labels) {
                let k = spec.kind.as_str().to_string();
                match kinds.iter_mut().find(|(kk, _)| *kk == k) {
                    Some((_, ls)) => ls.push(label.clone()),
                    None => kinds.push((k, vec![label.clone()])),
                }
            }
            kinds.sort();
            for (kind, variants) in kinds {
                if let Some((value, artifact)) = metric(format!("eval/robustness/{m}/{ds}/{kind}")) {
                    robustness.push(RobustnessRow {
                        dataset: ds.clone(),
                        model: m.clone(),
                        kind,
                        variants,
                        value: value.value,
                        artifact,
                    });
                }
            }
        }
    }

    let mut model_names: Vec<String> = Vec::new();
    for e in cfg.xai_config.datasets.values() {
        for m in e.models() {
            if !model_names.contains(&m) {
                model_names.push(m);
            }
        }
    }
    let models = model_names
        .into_iter()
        .map(|m| {
            let own = || rows.iter().filter(|r| r.model == m);
            let clean = || own().filter(|r| r.perturbation.is_none());
            ModelAttributes {
                cost: mean_of(clean().filter_map(|r| r.cost)),
                performance: mean_of(
                    clean()
                        .filter(|r| r.algorithm.as_ref() == cfg.xai_config.datasets[&r.dataset].algorithms.first())
                        .filter_map(|r| r.performance),
                ),
                deviation: mean_of(clean().filter_map(|r| r.deviation)),
                robustness: mean_of(robustness.iter().filter(|r| r.model == m).map(|r| r.value)),
                resilience: mean_of(own().filter_map(|r| r.resilience)),
                model: m,
            }
        })
        .collect();

    QualityReport {
        run_id: log.run_id.clone(),
        config_digest: log.config_digest.clone(),
        status: log.status,
        failed_step: log.failed_step.clone(),
        rows,
        robustness,
        models,
        skipped: skipped.to_vec(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Cost,
    Performance,
    Deviation,
    Robustness,
    Resilience,
}

impl Attribute {
    pub const ALL: [Attribute; 5] = [
        Attribute::Cost,
        Attribute::Performance,
        Attribute::Deviation,
        Attribute::Robustness,
        Attribute::Resilience,
    ];

    /// Larger raw values are better.
    pub fn is_benefit(self) -> bool {
        matches!(self, Attribute::Performance | Attribute::Deviation)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Attribute::Cost => "cost",
            Attribute::Performance => "performance",
            Attribute::Deviation => "deviation",
            Attribute::Robustness => "robustness",
            Attribute::Resilience => "resilience",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarPolygon {
    pub model: String,
    pub values: BTreeMap<Attribute, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarData {
    pub attributes: Vec<Attribute>,
    pub polygons: Vec<RadarPolygon>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReportError {
    #[error("report has no models")]
    Empty,
}

/// Min-max scales each attribute across models so that 1 is best. Cost-like
/// attributes are inverted after scaling; ties and single-model reports map
/// to 1. Attributes missing for any model are dropped.
pub fn normalize_for_radar(models: &[ModelAttributes]) -> Result<RadarData, ReportError> {
    if models.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut warnings = Vec::new();
    if models.len() == 1 {
        warnings.push(format!(
            "only one model ({}); min-max scaling is degenerate and every value is 1",
            models[0].model
        ));
    }
    let mut attributes = Vec::new();
    for a in Attribute::ALL {
        let present = models.iter().filter(|m| m.get(a).is_some()).count();
        if present == models.len() {
            attributes.push(a);
        } else if present > 0 {
            warnings.push(format!("attribute `{a}` missing for some models; dropped"));
        }
    }
    let mut polygons: Vec<RadarPolygon> = models
        .iter()
        .map(|m| RadarPolygon {
            model: m.model.clone(),
            values: BTreeMap::new(),
        })
        .collect();
    for &a in &attributes {
        let raw: Vec<f64> = models.iter().map(|m| m.get(a).expect("present")).collect();
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (p, x) in polygons.iter_mut().zip(&raw) {
            let v = if hi > lo {
                let s = (x - lo) / (hi - lo);
                if a.is_benefit() {
                    s
                } else {
                    1.0 - s
                }
            } else {
                1.0
            };
            p.values.insert(a, v);
        }
    }
    Ok(RadarData {
        attributes,
        polygons,
        warnings,
    })
}

/// Median prediction change laid out as models × perturbations × algorithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapData {
    pub dataset: String,
    pub models: Vec<String>,
    /// `"none"` first, then the perturbation labels.
    pub perturbations: Vec<String>,
    pub algorithms: Vec<String>,
    /// `values[model][perturbation][algorithm]`.
    pub values: Vec<Vec<Vec<Option<f64>>>>,
}

pub const CLEAN_LABEL: &str = "none";

pub fn heatmap(report: &QualityReport) -> Vec<HeatmapData> {
    let mut datasets: Vec<&str> = Vec::new();
    for r in &report.rows {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
    }
    datasets
        .into_iter()
        .map(|ds| {
            let rows: Vec<&ReportRow> = report.rows.iter().filter(|r| r.dataset == ds).collect();
            let mut models: Vec<String> = Vec::new();
            let mut perturbations = vec![CLEAN_LABEL.to_string()];
            let mut algorithms: Vec<String> = Vec::new();
            for r in &rows {
                if !models.contains(&r.model) {
                    models.push(r.model.clone());
                }
                if let Some(p) = &r.perturbation {
                    if !perturbations.contains(p) {
                        perturbations.push(p.clone());
                    }
                }
                if let Some(a) = &r.algorithm {
                    if !algorithms.contains(a) {
                        algorithms.push(a.clone());
                    }
                }
            }
            let values = models
                .iter()
                .map(|m| {
                    perturbations
                        .iter()
                        .map(|p| {
                            algorithms
                                .iter()
                                .map(|a| {
                                    rows.iter()
                                        .find(|r| {
                                            &r.model == m
                                                && r.algorithm.as_ref() == Some(a)
                                                && r.perturbation.as_deref().unwrap_or(CLEAN_LABEL) == p
                                        })
                                        .and_then(|r| r.prediction_change)
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect();
            HeatmapData {
                dataset: ds.to_string(),
                models,
                perturbations,
                algorithms,
                values,
            }
        })
        .collect()
}

pub const CSV_HEADER: [&str; 11] = [
    "dataset",
    "model",
    "algorithm",
    "perturbation",
    "cost",
    "energy_overhead",
    "performance",
    "deviation",
    "prediction_change",
    "ks",
    "resilience",
];

/// Flat table: the header plus one line per row; empty cells for attributes
/// a combination does not have.
pub fn to_csv(report: &QualityReport) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &report.rows {
        w.write_record([
            r.dataset.clone(),
            r.model.clone(),
            r.algorithm.clone().unwrap_or_default(),
            r.perturbation.clone().unwrap_or_else(|| CLEAN_LABEL.into()),
            num(r.cost),
            num(r.energy_overhead),
            num(r.performance),
            num(r.deviation),
            num(r.prediction_change),
            num(r.ks),
            num(r.resilience),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}
