//! The four service roles as plain functions over a [`Store`].
//!
//! [`ServiceApi`] is the contract the orchestrator drives. [`LocalServices`]
//! implements it in-process; the gateway crate serves it over HTTP and
//! provides a client implementing the same trait.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::canonical::{derived_id, digest, to_canonical};
use crate::dataset::{Dataset, DatasetData, DatasetKind};
use crate::metrics::{self, Aggregation, MetricError, MetricValue, SsimParams};
use crate::perturb::{self, SeverityTable};
use crate::provenance::ProvenanceLog;
use crate::refmodel::{self, METHOD_NAME, MODEL_NAME};
use crate::store::{check_name, ArtifactKind, ArtifactRef, Store, StoreError};
use crate::types::{ExplanationSummary, PerturbationSpec, PredictionRecord};
use crate::wire::{
    DatasetInfo, EvalRequest, EvalResponse, ExplainRequest, ExplainResponse, Health, MaskRequest, MaskResponse,
    PerturbRequest, PerturbResponse, PredictRequest, PredictResponse, RegistryListing, WireDataset, WireTensor,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Data,
    Model,
    Xai,
    Eval,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Data, Role::Model, Role::Xai, Role::Eval];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Data => "data",
            Role::Model => "model",
            Role::Xai => "xai",
            Role::Eval => "eval",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown role `{s}` (expected data, model, xai or eval)"))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServiceError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("{role} service unavailable: {message}")]
    Unavailable { role: Role, message: String },
    #[error("upstream adapter failed: {0}")]
    Upstream(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    /// HTTP status used on the wire.
    pub fn status(&self) -> u16 {
        match self {
            ServiceError::NotFound(_) => 404,
            ServiceError::Invalid(_) => 422,
            ServiceError::Conflict(_) => 409,
            ServiceError::Unavailable { .. } => 503,
            ServiceError::Upstream(_) => 502,
            ServiceError::Timeout(_) => 504,
            ServiceError::Internal(_) => 500,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Invalid(_) => "invalid",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Unavailable { .. } => "unavailable",
            ServiceError::Upstream(_) => "upstream",
            ServiceError::Timeout(_) => "timeout",
            ServiceError::Internal(_) => "internal",
        }
    }
}

impl From<StoreError> for ServiceError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::MissingArtifact { .. } | StoreError::UnknownRun(_) | StoreError::UnknownDataset(_) => {
                ServiceError::NotFound(e.to_string())
            }
            StoreError::BadName(_) => ServiceError::Invalid(e.to_string()),
            StoreError::DatasetConflict(_) | StoreError::Duplicate { .. } => ServiceError::Conflict(e.to_string()),
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

impl From<MetricError> for ServiceError {
    fn from(e: MetricError) -> Self {
        ServiceError::Invalid(e.to_string())
    }
}

fn invalid(e: impl fmt::Display) -> ServiceError {
    ServiceError::Invalid(e.to_string())
}

/// Operations of all four roles. A role's server answers only its own subset.
pub trait ServiceApi: Send + Sync {
    fn health(&self) -> Result<Health, ServiceError>;
    fn register_dataset(&self, dataset: &WireDataset) -> Result<DatasetInfo, ServiceError>;
    fn dataset_info(&self, dataset_id: &str) -> Result<DatasetInfo, ServiceError>;
    fn perturb(&self, dataset_id: &str, req: &PerturbRequest) -> Result<PerturbResponse, ServiceError>;
    fn mask(&self, dataset_id: &str, req: &MaskRequest) -> Result<MaskResponse, ServiceError>;
    fn predict(&self, model: &str, req: &PredictRequest) -> Result<PredictResponse, ServiceError>;
    fn explain(&self, method: &str, req: &ExplainRequest) -> Result<ExplainResponse, ServiceError>;
    fn eval(&self, metric: &str, req: &EvalRequest) -> Result<EvalResponse, ServiceError>;
    fn provenance(&self, run_id: &str) -> Result<ProvenanceLog, ServiceError>;
    fn registry(&self) -> Result<RegistryListing, ServiceError>;
}

/// External model or explainer reached through the same wire contract. Requests
/// handed to an adapter always carry the dataset inline.
pub trait Adapter: Send + Sync {
    fn predict(&self, model: &str, req: &PredictRequest) -> Result<PredictResponse, ServiceError>;
    fn explain(&self, method: &str, req: &ExplainRequest) -> Result<ExplainResponse, ServiceError>;
    fn base_url(&self) -> &str;
}

/// Metric names accepted by [`ServiceApi::eval`].
pub const METRICS: [&str; 14] = [
    "cliffs_delta",
    "consistency",
    "cost",
    "deviation",
    "kl",
    "ks",
    "mae",
    "mce",
    "performance",
    "prediction_change",
    "resilience",
    "robustness",
    "ssim",
    "stability",
];

pub struct LocalServices {
    store: Arc<Store>,
    table: SeverityTable,
    adapters: RwLock<BTreeMap<String, Arc<dyn Adapter>>>,
}

impl fmt::Debug for LocalServices {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LocalServices").field("store", &self.store.root()).finish()
    }
}

fn dataset_info(ds: &Dataset) -> Result<DatasetInfo, ServiceError> {
    Ok(DatasetInfo {
        dataset_id: ds.id.clone(),
        kind: ds.kind(),
        count: ds.len(),
        shape: ds.shape(),
        digest: ds.content_digest().map_err(invalid)?,
    })
}

fn top1(preds: &[PredictionRecord]) -> Vec<f64> {
    preds.iter().map(|p| p.top1_prob).collect()
}

/// `(p_orig[c], p_other[c])` with `c` the original top-1 class of each sample.
fn tracked_pairs(orig: &[PredictionRecord], other: &[PredictionRecord]) -> Result<Vec<(f64, f64)>, ServiceError> {
    if orig.len() != other.len() {
        return Err(MetricError::LengthMismatch(orig.len(), other.len()).into());
    }
    orig.iter()
        .zip(other)
        .map(|(o, m)| {
            let c = o.top1_index;
            m.probs
                .get(c)
                .map(|&pm| (o.top1_prob, pm))
                .ok_or_else(|| invalid(format!("class {c} missing from compared predictions")))
        })
        .collect()
}

impl LocalServices {
    pub fn new(store: Arc<Store>) -> Self {
        Self::with_table(store, SeverityTable::default())
    }

    pub fn with_table(store: Arc<Store>, table: SeverityTable) -> Self {
        Self {
            store,
            table,
            adapters: RwLock::new(BTreeMap::new()),
        }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn register_adapter(&self, name: &str, adapter: Arc<dyn Adapter>) -> Result<(), ServiceError> {
        check_name(name)?;
        if name == MODEL_NAME || name == METHOD_NAME {
            return Err(ServiceError::Conflict(format!("`{name}` is built in")));
        }
        self.adapters.write().unwrap_or_else(|p| p.into_inner()).insert(name.into(), adapter);
        Ok(())
    }

    pub fn adapter(&self, name: &str) -> Option<Arc<dyn Adapter>> {
        self.adapters.read().unwrap_or_else(|p| p.into_inner()).get(name).cloned()
    }

    pub fn registered(&self) -> Vec<(String, String)> {
        self.adapters
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .iter()
            .map(|(k, v)| (k.clone(), v.base_url().to_string()))
            .collect()
    }

    fn dataset(&self, id: &str) -> Result<Dataset, ServiceError> {
        Ok(self.store.get_dataset(id)?)
    }

    fn persist<T: Serialize>(
        &self,
        run_id: &str,
        kind: ArtifactKind,
        name: &str,
        value: &T,
    ) -> Result<ArtifactRef, ServiceError> {
        Ok(self.store.put_idempotent(run_id, kind, name, &to_canonical(value))?.to_ref())
    }

    fn predictions(&self, run_id: &str, r: &Option<ArtifactRef>, field: &str) -> Result<Vec<PredictionRecord>, ServiceError> {
        let r = r.as_ref().ok_or_else(|| invalid(format!("`{field}` is required")))?;
        if r.kind != ArtifactKind::Predictions {
            return Err(invalid(format!("`{field}` must reference a predictions artifact")));
        }
        let resp: PredictResponse = self.store.get_json(run_id, r)?;
        Ok(resp.predictions)
    }

    fn metric_artifact(&self, run_id: &str, r: &ArtifactRef) -> Result<MetricValue, ServiceError> {
        if r.kind != ArtifactKind::Metrics {
            return Err(invalid(format!("`{}` is not a metrics artifact", r.name)));
        }
        let resp: EvalResponse = self.store.get_json(run_id, r)?;
        Ok(resp.value)
    }

    fn per_sample(&self, run_id: &str, r: &Option<ArtifactRef>, field: &str) -> Result<Vec<f64>, ServiceError> {
        let r = r.as_ref().ok_or_else(|| invalid(format!("`{field}` is required")))?;
        self.metric_artifact(run_id, r)?
            .per_sample
            .ok_or_else(|| invalid(format!("`{}` carries no per-sample values", r.name)))
    }

    /// Summary sets for stability/consistency: one entry per explainer, each a
    /// list of per-sample summaries. Metrics artifacts contribute their
    /// per-sample vector as a single summary.
    fn summary_sets(&self, run_id: &str, refs: &[ArtifactRef]) -> Result<Vec<Vec<ExplanationSummary>>, ServiceError> {
        refs.iter()
            .map(|r| match r.kind {
                ArtifactKind::Summaries => {
                    let resp: ExplainResponse = self.store.get_json(run_id, r)?;
                    resp.importances.ok_or_else(|| invalid(format!("`{}` holds no importances", r.name)))
                }
                ArtifactKind::Metrics => {
                    let m = self.metric_artifact(run_id, r)?;
                    let v = m.per_sample.ok_or_else(|| invalid(format!("`{}` carries no per-sample values", r.name)))?;
                    Ok(vec![ExplanationSummary::new(m.name, v)])
                }
                _ => Err(invalid(format!("`{}` is neither summaries nor metrics", r.name))),
            })
            .collect()
    }

    fn compute_metric(&self, metric: &str, req: &EvalRequest) -> Result<MetricValue, ServiceError> {
        let run = req.run_id.as_str();
        let inp = &req.inputs;
        let v = match metric {
            "ks" => {
                let a = top1(&self.predictions(run, &inp.original, "original")?);
                let b = top1(&self.predictions(run, &inp.other, "other")?);
                MetricValue::new("ks", metrics::ks_statistic(&a, &b)?, a.len().min(b.len()), Aggregation::Sup)
            }
            "deviation" | "prediction_change" => {
                let o = self.predictions(run, &inp.original, "original")?;
                let m = self.predictions(run, &inp.other, "other")?;
                let pairs = tracked_pairs(&o, &m)?;
                if metric == "deviation" {
                    let devs: Vec<f64> = pairs.iter().map(|&(p, q)| metrics::explanation_deviation(p, q)).collect();
                    let mut v = MetricValue::new("deviation", metrics::median(&devs)?, devs.len(), Aggregation::Median);
                    v.details.insert("mean".into(), metrics::mean(&devs)?);
                    v.per_sample = Some(devs);
                    v
                } else {
                    let changes: Vec<_> = pairs.iter().map(|&(p, q)| metrics::prediction_change(p, q)).collect();
                    let pct = changes.iter().map(|c| c.pct.clone()).collect::<Result<Vec<f64>, _>>()?;
                    let deltas: Vec<f64> = changes.iter().map(|c| c.delta).collect();
                    let mut v =
                        MetricValue::new("prediction_change", metrics::median(&pct)?, pct.len(), Aggregation::Median);
                    v.details.insert("median_delta".into(), metrics::median(&deltas)?);
                    v.details.insert(
                        "mean_prediction_difference".into(),
                        metrics::mean_prediction_difference(&pairs)?,
                    );
                    v.per_sample = Some(pct);
                    v
                }
            }
            "performance" => {
                let preds = self.predictions(run, &inp.original, "original")?;
                let id = inp.dataset_id.as_deref().ok_or_else(|| invalid("`dataset_id` is required"))?;
                let labels = self
                    .dataset(id)?
                    .labels
                    .ok_or_else(|| invalid(format!("dataset `{id}` has no labels")))?;
                let top_n = inp.top_n.clone().unwrap_or_else(|| vec![1, 5]);
                let r = metrics::performance_metrics(&preds, &labels, &top_n)?;
                let mut v = MetricValue::new("performance", r.f1, preds.len(), Aggregation::None);
                v.details = r.details();
                v
            }
            "robustness" => {
                let o = top1(&self.predictions(run, &inp.original, "original")?);
                if inp.set.is_empty() {
                    return Err(invalid("`set` must list the perturbed predictions"));
                }
                let mut ks = Vec::with_capacity(inp.set.len());
                for r in &inp.set {
                    let adv = top1(&self.predictions(run, &Some(r.clone()), "set")?);
                    ks.push(metrics::ks_statistic(&o, &adv)?);
                }
                let mut v = MetricValue::new("robustness", metrics::robustness(&ks)?, ks.len(), Aggregation::Mean);
                for (i, d) in ks.iter().enumerate() {
                    v.details.insert(format!("ks_{i}"), *d);
                }
                v.per_sample = Some(ks);
                v
            }
            "resilience" => {
                let o = self.metric_artifact(run, inp.original.as_ref().ok_or_else(|| invalid("`original` is required"))?)?;
                let a = self.metric_artifact(run, inp.other.as_ref().ok_or_else(|| invalid("`other` is required"))?)?;
                let mut v = MetricValue::new(
                    "resilience",
                    metrics::explanation_resilience(o.value, a.value),
                    o.sample_count.min(a.sample_count),
                    Aggregation::None,
                );
                v.details.insert("deviation_original".into(), o.value);
                v.details.insert("deviation_adversarial".into(), a.value);
                v
            }
            "cost" => {
                let c = inp.cost.ok_or_else(|| invalid("`cost` is required"))?;
                let o = metrics::cost_overhead(&c)?;
                let mut v = MetricValue::new(metric, o.r_time, 1, Aggregation::None);
                v.details = BTreeMap::from([
                    ("r_time".to_string(), o.r_time),
                    ("r_energy".to_string(), o.r_energy),
                    ("t_ml".to_string(), c.t_ml),
                    ("t_xai".to_string(), c.t_xai),
                    ("t_eval".to_string(), c.t_eval),
                    ("e_ml".to_string(), c.e_ml),
                    ("e_xai".to_string(), c.e_xai),
                ]);
                v
            }
            "kl" => {
                let o = self.predictions(run, &inp.original, "original")?;
                let m = self.predictions(run, &inp.other, "other")?;
                if o.len() != m.len() {
                    return Err(MetricError::LengthMismatch(o.len(), m.len()).into());
                }
                let kl = o
                    .iter()
                    .zip(&m)
                    .map(|(a, b)| metrics::kl_normalized(&a.probs, &b.probs))
                    .collect::<Result<Vec<f64>, _>>()?;
                let mut v = MetricValue::new("kl", metrics::mean(&kl)?, kl.len(), Aggregation::Mean);
                v.per_sample = Some(kl);
                v
            }
            "mae" | "ssim" => {
                let a_id = inp.dataset_id.as_deref().ok_or_else(|| invalid("`dataset_id` is required"))?;
                let b_id = inp.other_dataset_id.as_deref().ok_or_else(|| invalid("`other_dataset_id` is required"))?;
                let (a, b) = (self.dataset(a_id)?, self.dataset(b_id)?);
                if a.len() != b.len() || a.kind() != b.kind() {
                    return Err(invalid("datasets differ in kind or length"));
                }
                let values = match (&a.data, &b.data, metric) {
                    (DatasetData::Images(x), DatasetData::Images(y), "mae") => x
                        .iter()
                        .zip(y)
                        .map(|(p, q)| metrics::mae(&p.to_f64(), &q.to_f64()))
                        .collect::<Result<Vec<f64>, _>>()?,
                    (DatasetData::Images(x), DatasetData::Images(y), _) => {
                        let params = SsimParams::default();
                        x.iter()
                            .zip(y)
                            .map(|(p, q)| metrics::ssim(&p.to_gray(), &q.to_gray(), &params))
                            .collect::<Result<Vec<f64>, _>>()?
                    }
                    (DatasetData::Tabular(x), DatasetData::Tabular(y), "mae") => (0..x.rows())
                        .map(|r| metrics::mae(x.row(r), y.row(r)))
                        .collect::<Result<Vec<f64>, _>>()?,
                    _ => return Err(invalid("ssim needs image datasets")),
                };
                let mut v = MetricValue::new(metric, metrics::mean(&values)?, values.len(), Aggregation::Mean);
                v.per_sample = Some(values);
                v
            }
            "stability" | "consistency" => {
                let sets = self.summary_sets(run, &inp.set)?;
                let f_d: fn(&ExplanationSummary, &ExplanationSummary) -> f64 = match inp.distance.as_deref() {
                    None | Some("mean_abs") => metrics::mean_abs_distance,
                    Some("kendall_tau") => metrics::kendall_tau_distance,
                    Some(other) => return Err(invalid(format!("unknown distance `{other}`"))),
                };
                let samples = sets.first().map(Vec::len).unwrap_or(0);
                if sets.iter().any(|s| s.len() != samples) || samples == 0 {
                    return Err(invalid("summary sets must be non-empty and equally long"));
                }
                let anchor = inp.anchor.unwrap_or(0);
                if metric == "consistency" && anchor >= sets.len() {
                    return Err(MetricError::AnchorMissing.into());
                }
                let per_sample = (0..samples)
                    .map(|i| {
                        let group: Vec<ExplanationSummary> = sets.iter().map(|s| s[i].clone()).collect();
                        if metric == "stability" {
                            metrics::stability(&group, f_d)
                        } else {
                            metrics::consistency(&group, &group[anchor], f_d)
                        }
                    })
                    .collect::<Result<Vec<f64>, _>>()?;
                let mut v = MetricValue::new(metric, metrics::mean(&per_sample)?, sets.len(), Aggregation::Mean);
                v.per_sample = Some(per_sample);
                v
            }
            "cliffs_delta" => {
                let a = self.per_sample(run, &inp.original, "original")?;
                let b = self.per_sample(run, &inp.other, "other")?;
                MetricValue::new("cliffs_delta", metrics::cliffs_delta(&a, &b)?, a.len() + b.len(), Aggregation::None)
            }
            "mce" => {
                let m = inp.err_model.as_deref().ok_or_else(|| invalid("`err_model` is required"))?;
                let r = inp.err_ref.as_deref().ok_or_else(|| invalid("`err_ref` is required"))?;
                MetricValue::new("mce", metrics::mce(m, r)?, m.len(), Aggregation::Mean)
            }
            other => return Err(ServiceError::NotFound(format!("metric `{other}`"))),
        };
        if !v.value.is_finite() {
            return Err(MetricError::NonFinite.into());
        }
        Ok(v)
    }

    fn builtin_explain(&self, ds: &Dataset, req: &ExplainRequest, ids: Vec<usize>) -> Result<ExplainResponse, ServiceError> {
        if req.model != MODEL_NAME {
            return Err(invalid(format!("`{METHOD_NAME}` explains only `{MODEL_NAME}`, not `{}`", req.model)));
        }
        let mut classes = Vec::with_capacity(ids.len());
        let (masks, importances) = match &ds.data {
            DatasetData::Images(images) => {
                let m = refmodel::vision();
                let mut masks = Vec::with_capacity(ids.len());
                for &i in &ids {
                    let class = m.predict_image(&images[i]).map_err(invalid)?.top1_index;
                    masks.push(WireTensor::from_mask(&m.explain_image(&images[i], class).map_err(invalid)?));
                    classes.push(class);
                }
                (Some(masks), None)
            }
            DatasetData::Tabular(t) => {
                let m = refmodel::tabular();
                let mut out = Vec::with_capacity(ids.len());
                for &i in &ids {
                    let class = m.predict_row(t.row(i)).map_err(invalid)?.top1_index;
                    out.push(m.explain_row(t.row(i), class).map_err(invalid)?);
                    classes.push(class);
                }
                (None, Some(out))
            }
        };
        Ok(ExplainResponse {
            method: METHOD_NAME.into(),
            model: req.model.clone(),
            dataset_id: ds.id.clone(),
            sample_ids: ids,
            classes,
            masks,
            importances,
            artifact: None,
        })
    }
}

fn check_explanation(resp: &ExplainResponse, kind: DatasetKind, n: usize) -> Result<(), ServiceError> {
    let ok = match kind {
        DatasetKind::Image => resp.masks.as_ref().map(Vec::len) == Some(n) && resp.importances.is_none(),
        DatasetKind::Tabular => resp.importances.as_ref().map(Vec::len) == Some(n) && resp.masks.is_none(),
    };
    if ok && resp.sample_ids.len() == n && resp.classes.len() == n {
        Ok(())
    } else {
        Err(ServiceError::Upstream("explanation does not match the requested samples".into()))
    }
}

impl ServiceApi for LocalServices {
    fn health(&self) -> Result<Health, ServiceError> {
        Ok(Health {
            role: "inproc".into(),
            version: VERSION.into(),
        })
    }

    fn register_dataset(&self, dataset: &WireDataset) -> Result<DatasetInfo, ServiceError> {
        check_name(&dataset.id)?;
        let ds = dataset.to_dataset().map_err(invalid)?;
        self.store.put_dataset(&ds)?;
        dataset_info(&ds)
    }

    fn dataset_info(&self, dataset_id: &str) -> Result<DatasetInfo, ServiceError> {
        let m = self.store.dataset_manifest(dataset_id)?;
        Ok(DatasetInfo {
            dataset_id: m.id.clone(),
            kind: m.kind,
            count: m.count,
            shape: m.shape.clone(),
            digest: m.content_digest(),
        })
    }

    fn perturb(&self, dataset_id: &str, req: &PerturbRequest) -> Result<PerturbResponse, ServiceError> {
        let spec = PerturbationSpec::new(req.kind, req.severity, req.seed).map_err(invalid)?;
        let ds = self.dataset(dataset_id)?;
        let out = perturb::apply(&spec, &ds, &self.table).map_err(invalid)?;
        let manifest = self.store.put_dataset(&out)?;
        Ok(PerturbResponse {
            source_id: dataset_id.into(),
            perturbed_id: out.id,
            digest: manifest.content_digest(),
        })
    }

    fn mask(&self, dataset_id: &str, req: &MaskRequest) -> Result<MaskResponse, ServiceError> {
        let ds = self.dataset(dataset_id)?;
        let expl: ExplainResponse = self.store.get_json(&req.run_id, &req.explanations)?;
        if expl.dataset_id != ds.id {
            return Err(invalid(format!("explanations belong to `{}`, not `{}`", expl.dataset_id, ds.id)));
        }
        if let Some(&bad) = expl.sample_ids.iter().find(|&&i| i >= ds.len()) {
            return Err(invalid(format!("sample {bad} out of range")));
        }
        let labels = ds.labels.as_ref().map(|l| expl.sample_ids.iter().map(|&i| l[i]).collect());
        let id = derived_id("masked", &ds.id, req.explanations.digest.as_bytes());
        let masked = match (&ds.data, &expl.masks, &expl.importances) {
            (DatasetData::Images(images), Some(masks), None) if masks.len() == expl.sample_ids.len() => {
                let out = expl
                    .sample_ids
                    .iter()
                    .zip(masks)
                    .map(|(&i, m)| metrics::apply_mask(&images[i], &m.to_mask().map_err(invalid)?).map_err(invalid))
                    .collect::<Result<Vec<_>, _>>()?;
                Dataset::images(id, out, labels).map_err(invalid)?
            }
            (DatasetData::Tabular(t), None, Some(imps)) if imps.len() == expl.sample_ids.len() => {
                let rows = t.select_rows(&expl.sample_ids);
                Dataset::tabular(id, metrics::apply_importances(&rows, imps)?, labels).map_err(invalid)?
            }
            _ => return Err(invalid("explanations do not match the dataset kind")),
        };
        let manifest = self.store.put_dataset(&masked)?;
        Ok(MaskResponse {
            source_id: ds.id,
            masked_id: masked.id,
            digest: manifest.content_digest(),
        })
    }

    fn predict(&self, model: &str, req: &PredictRequest) -> Result<PredictResponse, ServiceError> {
        let ds = self.dataset(&req.dataset_id)?;
        let predictions = if model == MODEL_NAME {
            match &ds.data {
                DatasetData::Images(images) => images
                    .iter()
                    .map(|img| refmodel::vision().predict_image(img))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(invalid)?,
                DatasetData::Tabular(t) => refmodel::tabular().predict_table(t).map_err(invalid)?,
            }
        } else if let Some(adapter) = self.adapter(model) {
            let mut fwd = req.clone();
            fwd.run_id = None;
            fwd.artifact = None;
            fwd.dataset = Some(WireDataset::from_dataset(&ds));
            let resp = adapter.predict(model, &fwd)?;
            if resp.predictions.len() != ds.len() {
                return Err(ServiceError::Upstream(format!(
                    "{} predictions for {} samples",
                    resp.predictions.len(),
                    ds.len()
                )));
            }
            resp.predictions
        } else {
            return Err(ServiceError::NotFound(format!("model `{model}`")));
        };
        let mut resp = PredictResponse {
            model: model.into(),
            dataset_id: ds.id.clone(),
            predictions,
            artifact: None,
        };
        if let Some(run) = &req.run_id {
            let name = req.artifact.clone().unwrap_or_else(|| format!("{model}__{}.json", ds.id));
            resp.artifact = Some(self.persist(run, ArtifactKind::Predictions, &name, &resp)?);
        }
        Ok(resp)
    }

    fn explain(&self, method: &str, req: &ExplainRequest) -> Result<ExplainResponse, ServiceError> {
        let ds = self.dataset(&req.dataset_id)?;
        let ids = req.sample_ids.clone().unwrap_or_else(|| (0..ds.len()).collect());
        if let Some(&bad) = ids.iter().find(|&&i| i >= ds.len()) {
            return Err(invalid(format!("sample {bad} out of range for {} samples", ds.len())));
        }
        let mut resp = if method == METHOD_NAME {
            self.builtin_explain(&ds, req, ids)?
        } else if let Some(adapter) = self.adapter(method) {
            if ds.kind() != DatasetKind::Image {
                return Err(invalid(format!("method `{method}` explains image datasets only")));
            }
            let mut fwd = req.clone();
            fwd.run_id = None;
            fwd.artifact = None;
            fwd.sample_ids = Some(ids.clone());
            fwd.dataset = Some(WireDataset::from_dataset(&ds));
            let r = adapter.explain(method, &fwd)?;
            check_explanation(&r, ds.kind(), ids.len())?;
            r
        } else {
            return Err(ServiceError::NotFound(format!("method `{method}`")));
        };
        resp.artifact = None;
        if let Some(run) = &req.run_id {
            let kind = match ds.kind() {
                DatasetKind::Image => ArtifactKind::Masks,
                DatasetKind::Tabular => ArtifactKind::Summaries,
            };
            let name = req.artifact.clone().unwrap_or_else(|| format!("{method}__{}__{}.json", req.model, ds.id));
            resp.artifact = Some(self.persist(run, kind, &name, &resp)?);
        }
        Ok(resp)
    }

    fn eval(&self, metric: &str, req: &EvalRequest) -> Result<EvalResponse, ServiceError> {
        check_name(&req.run_id)?;
        let mut value = self.compute_metric(metric, req)?;
        value.inputs_digest = digest(&json!({"metric": metric, "inputs": req.inputs}));
        let name = req
            .artifact
            .clone()
            .unwrap_or_else(|| format!("{metric}__{}.json", &value.inputs_digest[..16]));
        let mut resp = EvalResponse {
            value,
            inputs: Some(req.inputs.clone()),
            artifact: None,
        };
        resp.artifact = Some(self.persist(&req.run_id, ArtifactKind::Metrics, &name, &resp)?);
        Ok(resp)
    }

    fn provenance(&self, run_id: &str) -> Result<ProvenanceLog, ServiceError> {
        Ok(self.store.read_provenance(run_id)?)
    }

    fn registry(&self) -> Result<RegistryListing, ServiceError> {
        let names: Vec<String> = self.registered().into_iter().map(|(n, _)| n).collect();
        let mut models = vec![MODEL_NAME.to_string()];
        let mut methods = vec![METHOD_NAME.to_string()];
        models.extend(names.iter().cloned());
        methods.extend(names);
        Ok(RegistryListing { models, methods })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;
    use crate::types::PerturbationKind;
    use crate::wire::EvalInputs;

    fn services() -> (tempfile::TempDir, LocalServices) {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(Store::open(dir.path()).unwrap());
        (dir, LocalServices::new(store))
    }

    fn register(s: &LocalServices, ds: &Dataset) -> String {
        s.register_dataset(&WireDataset::from_dataset(ds)).unwrap().dataset_id
    }

    #[test]
    fn perturb_identity_idempotent_and_invalid() {
        let (_d, s) = services();
        let ds = synthetic::image_dataset(4, 1);
        let id = register(&s, &ds);
        let src = s.dataset_info(&id).unwrap();
        let ident = PerturbRequest {
            kind: PerturbationKind::Identity,
            severity: 0,
            seed: None,
        };
        let r = s.perturb(&id, &ident).unwrap();
        assert_eq!(r.digest, src.digest);
        let g = PerturbRequest {
            kind: PerturbationKind::GaussianNoise,
            severity: 2,
            seed: Some(3),
        };
        assert_eq!(s.perturb(&id, &g).unwrap(), s.perturb(&id, &g).unwrap());
        let bad = PerturbRequest { severity: 9, ..g };
        assert!(matches!(s.perturb(&id, &bad), Err(ServiceError::Invalid(_))));
        assert!(matches!(s.perturb("nope", &ident), Err(ServiceError::NotFound(_))));
    }

    #[test]
    fn predict_explain_subset_and_errors() {
        let (_d, s) = services();
        let id = register(&s, &synthetic::image_dataset(8, 2));
        let p = s
            .predict(
                MODEL_NAME,
                &PredictRequest {
                    dataset_id: id.clone(),
                    run_id: None,
                    artifact: None,
                    dataset: None,
                },
            )
            .unwrap();
        assert_eq!(p.predictions.len(), 8);
        let req = ExplainRequest {
            model: MODEL_NAME.into(),
            dataset_id: id.clone(),
            sample_ids: Some(vec![0, 5]),
            run_id: None,
            artifact: None,
            dataset: None,
        };
        let e = s.explain(METHOD_NAME, &req).unwrap();
        assert_eq!(e.sample_ids, vec![0, 5]);
        assert_eq!(e.masks.as_ref().unwrap().len(), 2);
        assert!(matches!(s.explain("GradCAM", &req), Err(ServiceError::NotFound(_))));
        assert!(matches!(
            s.predict("nope", &PredictRequest { dataset_id: id, run_id: None, artifact: None, dataset: None }),
            Err(ServiceError::NotFound(_))
        ));
    }

    #[test]
    fn ks_of_identical_artifacts_is_zero() {
        let (_d, s) = services();
        let id = register(&s, &synthetic::image_dataset(6, 2));
        let p = s
            .predict(
                MODEL_NAME,
                &PredictRequest {
                    dataset_id: id,
                    run_id: Some("r".into()),
                    artifact: None,
                    dataset: None,
                },
            )
            .unwrap();
        let a = p.artifact.unwrap();
        let req = EvalRequest {
            run_id: "r".into(),
            artifact: None,
            inputs: EvalInputs {
                original: Some(a.clone()),
                other: Some(a),
                ..Default::default()
            },
        };
        assert_eq!(s.eval("ks", &req).unwrap().value.value, 0.0);
        assert!(matches!(s.eval("nope", &req), Err(ServiceError::NotFound(_))));
    }
}
