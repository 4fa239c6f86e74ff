//! Runs a plan against the service roles and records provenance.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;
use tracing::{debug, info, warn};

use super::config::{ConfigError, PipelineConfig, PipelineKind};
use super::plan::{plan, Action, EvalStep, PipelinePlan, PlanError, PlanStep};
use super::report::{build_report, normalize_for_radar, QualityReport};
use crate::canonical::{digest, digest_without};
use crate::dataset::DatasetKind;
use crate::energy::{ConstantPower, EnergyMeter};
use crate::metrics::MetricValue;
use crate::provenance::{
    replay_check, Mismatch, MonotoneClock, ProvenanceError, ProvenanceLog, ReplayReport, RunStatus, StepMismatch,
    StepRecord, StepStatus,
};
use crate::service::{Role, ServiceApi, ServiceError};
use crate::store::{ArtifactRef, Store, StoreError, RADAR_FILE, REPORT_FILE};
use crate::synthetic;
use crate::types::CostRecord;
use crate::wire::{EvalInputs, EvalRequest, ExplainRequest, MaskRequest, PerturbRequest, PredictRequest, WireDataset};

/// One client per role; all four may be the same object.
#[derive(Clone)]
pub struct Services {
    pub data: Arc<dyn ServiceApi>,
    pub model: Arc<dyn ServiceApi>,
    pub xai: Arc<dyn ServiceApi>,
    pub eval: Arc<dyn ServiceApi>,
}

impl Services {
    pub fn uniform(api: Arc<dyn ServiceApi>) -> Self {
        Self {
            data: api.clone(),
            model: api.clone(),
            xai: api.clone(),
            eval: api,
        }
    }

    pub fn get(&self, role: Role) -> &dyn ServiceApi {
        match role {
            Role::Data => self.data.as_ref(),
            Role::Model => self.model.as_ref(),
            Role::Xai => self.xai.as_ref(),
            Role::Eval => self.eval.as_ref(),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("provenance: {0}")]
    Provenance(#[from] ProvenanceError),
    #[error("run `{0}` already exists")]
    RunExists(String),
    #[error("`{path}` does not resolve: {message}")]
    Unresolved { path: String, message: String },
}

/// What a finished step hands to its dependents.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "output", rename_all = "snake_case")]
pub enum StepOutput {
    Dataset { dataset_id: String, kind: DatasetKind, count: usize },
    Predictions { artifact: ArtifactRef },
    Explanations { artifact: ArtifactRef },
    Metric { value: MetricValue, artifact: ArtifactRef },
}

impl StepOutput {
    fn dataset_id(&self) -> Result<&str, ServiceError> {
        match self {
            StepOutput::Dataset { dataset_id, .. } => Ok(dataset_id),
            other => Err(ServiceError::Internal(format!("expected a dataset, got {other:?}"))),
        }
    }

    fn artifact(&self) -> &ArtifactRef {
        match self {
            StepOutput::Dataset { .. } => unreachable!("datasets are not run artifacts"),
            StepOutput::Predictions { artifact }
            | StepOutput::Explanations { artifact }
            | StepOutput::Metric { artifact, .. } => artifact,
        }
    }

    pub fn metric(&self) -> Option<&MetricValue> {
        match self {
            StepOutput::Metric { value, .. } => Some(value),
            _ => None,
        }
    }
}

pub struct RunOptions {
    pub meter: Arc<dyn EnergyMeter>,
    /// Overrides the config's parallelism.
    pub parallelism: Option<usize>,
    /// Run id to use when the config names none.
    pub run_id: Option<String>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            meter: Arc::new(ConstantPower::default()),
            parallelism: None,
            run_id: None,
        }
    }
}

impl RunOptions {
    pub fn for_config(cfg: &PipelineConfig) -> Self {
        Self {
            meter: Arc::new(ConstantPower { watts: cfg.energy_watts }),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_id: String,
    pub plan: PipelinePlan,
    pub log: ProvenanceLog,
    pub report: QualityReport,
    pub outputs: BTreeMap<String, StepOutput>,
    /// Steps not executed because an input or their pipelines failed.
    pub skipped: Vec<String>,
    /// Error of each failed step, by step id.
    pub errors: BTreeMap<String, ServiceError>,
}

impl RunOutcome {
    pub fn succeeded(&self) -> bool {
        self.log.status == RunStatus::Succeeded
    }

    /// The first failed step and its error.
    pub fn failure(&self) -> Option<(&StepRecord, &str)> {
        let id = self.log.failed_step.as_deref()?;
        let step = self.log.step(id)?;
        Some((step, step.error.as_deref().unwrap_or("")))
    }

    /// First role found unreachable, if any step failed for that reason.
    pub fn unreachable_role(&self) -> Option<Role> {
        let first = self.log.failed_step.as_deref().and_then(|id| self.errors.get(id));
        first.into_iter().chain(self.errors.values()).find_map(|e| match e {
            ServiceError::Unavailable { role, .. } => Some(*role),
            _ => None,
        })
    }
}

/// Readable artifact name for a step.
pub fn artifact_name(step_id: &str) -> String {
    format!("{}.json", step_id.replace('/', "__").replace('#', "+"))
}

/// Unused run id of the form `run-<digest prefix>-<n>`.
pub fn fresh_run_id(store: &Store, prefix: &str) -> String {
    (1..)
        .map(|n| format!("{prefix}-{n}"))
        .find(|id| !store.run_exists(id))
        .expect("unbounded search")
}

/// Up-front checks that configured datasets, models and methods exist. Roles
/// that cannot be reached are left for the steps to report.
pub fn resolve_references(cfg: &PipelineConfig, services: &Services) -> Result<(), RunError> {
    let models = services.model.registry().ok();
    let methods = services.xai.registry().ok();
    for (id, entry) in &cfg.xai_config.datasets {
        let base = format!("xai_config.datasets.{id}");
        if entry.synthetic.is_none() {
            if let Err(ServiceError::NotFound(m)) = services.data.dataset_info(id) {
                return Err(RunError::Unresolved { path: base, message: m });
            }
        }
        if let Some(list) = &models {
            for (i, m) in entry.models().iter().enumerate() {
                if !list.models.contains(m) {
                    return Err(RunError::Unresolved {
                        path: format!("{base}.model_name[{i}]"),
                        message: format!("model `{m}` is not registered"),
                    });
                }
            }
        }
        if let Some(list) = &methods {
            let xai_used = cfg.pipelines.iter().any(|p| p.needs_explainer());
            for (i, a) in entry.algorithms.iter().enumerate() {
                if xai_used && !list.methods.contains(a) {
                    return Err(RunError::Unresolved {
                        path: format!("{base}.algorithms[{i}]"),
                        message: format!("method `{a}` is not registered"),
                    });
                }
            }
        }
    }
    Ok(())
}

struct StepResult {
    request_digest: String,
    response_digest: String,
    output: StepOutput,
}

fn request_digest(target: &str, body: &impl Serialize) -> String {
    let mut v = serde_json::to_value(body).expect("request serialises");
    if let Value::Object(m) = &mut v {
        m.insert("target".into(), Value::String(target.into()));
    }
    digest_without(&v, &["run_id"])
}

/// Timing of already finished steps, for the cost step.
#[derive(Clone, Copy)]
struct Timing {
    seconds: f64,
}

struct Worker<'a> {
    cfg: &'a PipelineConfig,
    services: &'a Services,
    run_id: &'a str,
    meter: &'a dyn EnergyMeter,
}

impl Worker<'_> {
    fn run(&self, step: &PlanStep, inputs: &[StepOutput], timings: &[Timing], after: &[Timing]) -> Result<StepResult, ServiceError> {
        let svc = self.services.get(step.role());
        let name = artifact_name(&step.id);
        let run_id = Some(self.run_id.to_string());
        let input = |i: usize| inputs.get(i).ok_or_else(|| ServiceError::Internal(format!("{} lacks input {i}", step.id)));
        match &step.action {
            Action::Dataset { dataset, synthetic: source } => {
                let req = json!({"dataset_id": dataset, "synthetic": source});
                let info = match source {
                    Some(s) => {
                        let mut ds = match s.kind {
                            DatasetKind::Image => synthetic::image_dataset_sized(
                                s.count,
                                s.size.unwrap_or(synthetic::IMAGE_SIZE),
                                s.seed,
                            ),
                            DatasetKind::Tabular => synthetic::tabular_dataset(s.count, s.seed),
                        };
                        ds.id = dataset.clone();
                        svc.register_dataset(&WireDataset::from_dataset(&ds))?
                    }
                    None => svc.dataset_info(dataset)?,
                };
                Ok(StepResult {
                    request_digest: digest(&req),
                    response_digest: digest(&info),
                    output: StepOutput::Dataset {
                        dataset_id: info.dataset_id,
                        kind: info.kind,
                        count: info.count,
                    },
                })
            }
            Action::Perturb { spec, .. } => {
                let src = input(0)?.dataset_id()?.to_string();
                let body = PerturbRequest {
                    kind: spec.kind,
                    severity: spec.severity,
                    seed: spec.seed,
                };
                let resp = svc.perturb(&src, &body)?;
                let info = self.services.data.dataset_info(&resp.perturbed_id)?;
                Ok(StepResult {
                    request_digest: request_digest(&src, &body),
                    response_digest: digest(&resp),
                    output: StepOutput::Dataset {
                        dataset_id: resp.perturbed_id,
                        kind: info.kind,
                        count: info.count,
                    },
                })
            }
            Action::Predict { model, .. } | Action::PredictMasked { model, .. } => {
                let body = PredictRequest {
                    dataset_id: input(0)?.dataset_id()?.to_string(),
                    run_id,
                    artifact: Some(name),
                    dataset: None,
                };
                let resp = svc.predict(model, &body)?;
                let artifact = resp
                    .artifact
                    .clone()
                    .ok_or_else(|| ServiceError::Upstream("predictions were not persisted".into()))?;
                Ok(StepResult {
                    request_digest: request_digest(model, &body),
                    response_digest: digest(&resp),
                    output: StepOutput::Predictions { artifact },
                })
            }
            Action::Explain { method, model, .. } => {
                let body = ExplainRequest {
                    model: model.clone(),
                    dataset_id: input(0)?.dataset_id()?.to_string(),
                    sample_ids: None,
                    run_id,
                    artifact: Some(name),
                    dataset: None,
                };
                let resp = svc.explain(method, &body)?;
                let artifact = resp
                    .artifact
                    .clone()
                    .ok_or_else(|| ServiceError::Upstream("explanations were not persisted".into()))?;
                Ok(StepResult {
                    request_digest: request_digest(method, &body),
                    response_digest: digest(&resp),
                    output: StepOutput::Explanations { artifact },
                })
            }
            Action::Mask { .. } => {
                let src = input(0)?.dataset_id()?.to_string();
                let body = MaskRequest {
                    run_id: self.run_id.to_string(),
                    explanations: input(1)?.artifact().clone(),
                };
                let resp = svc.mask(&src, &body)?;
                let info = self.services.data.dataset_info(&resp.masked_id)?;
                Ok(StepResult {
                    request_digest: request_digest(&src, &body),
                    response_digest: digest(&resp),
                    output: StepOutput::Dataset {
                        dataset_id: resp.masked_id,
                        kind: info.kind,
                        count: info.count,
                    },
                })
            }
            Action::Eval(e) => {
                let art = |i: usize| input(i).map(|o| o.artifact().clone());
                let inputs = match e {
                    EvalStep::Performance { .. } => {
                        let mut top_n = vec![1, self.cfg.top_n];
                        top_n.dedup();
                        EvalInputs {
                            original: Some(art(1)?),
                            dataset_id: Some(input(0)?.dataset_id()?.to_string()),
                            top_n: Some(top_n),
                            ..Default::default()
                        }
                    }
                    EvalStep::Deviation { .. }
                    | EvalStep::PredictionChange { .. }
                    | EvalStep::Ks { .. }
                    | EvalStep::Resilience { .. } => EvalInputs {
                        original: Some(art(0)?),
                        other: Some(art(1)?),
                        ..Default::default()
                    },
                    EvalStep::Robustness { .. } => EvalInputs {
                        original: Some(art(0)?),
                        set: (1..inputs.len()).map(art).collect::<Result<_, _>>()?,
                        ..Default::default()
                    },
                    EvalStep::Cost { .. } => {
                        let (t_ml, t_xai) = (timings[0].seconds, timings[1].seconds);
                        let t_eval: f64 = after.iter().map(|t| t.seconds).sum();
                        EvalInputs {
                            cost: Some(CostRecord {
                                t_ml,
                                t_xai,
                                t_eval,
                                e_ml: self.meter.energy_wh(t_ml),
                                e_xai: self.meter.energy_wh(t_xai),
                            }),
                            ..Default::default()
                        }
                    }
                };
                let body = EvalRequest {
                    run_id: self.run_id.to_string(),
                    artifact: Some(name),
                    inputs,
                };
                let resp = svc.eval(e.metric(), &body)?;
                let artifact = resp
                    .artifact
                    .clone()
                    .ok_or_else(|| ServiceError::Upstream("metric was not persisted".into()))?;
                Ok(StepResult {
                    request_digest: request_digest(e.metric(), &body),
                    response_digest: digest(&resp),
                    output: StepOutput::Metric {
                        value: resp.value,
                        artifact,
                    },
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum State {
    Pending,
    Running,
    Done,
    Failed,
    Skipped,
}

struct Finished {
    index: usize,
    record: StepRecord,
    output: Option<StepOutput>,
    error: Option<ServiceError>,
}

/// Loads, plans and executes `cfg`, then writes the provenance log, the report
/// and the radar data into the run directory.
pub fn run(cfg: &PipelineConfig, services: &Services, store: &Store, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let config_digest = cfg.digest();
    let run_id = match cfg.run_id.clone().or_else(|| opts.run_id.clone()) {
        Some(id) => id,
        None => fresh_run_id(store, &format!("run-{}", &config_digest[..12])),
    };
    if store.run_exists(&run_id) {
        return Err(RunError::RunExists(run_id));
    }
    let plan = plan(cfg)?;
    resolve_references(cfg, services)?;
    let mut log = ProvenanceLog::new(&run_id, &config_digest, cfg.to_value());
    store.write_provenance(&log)?;
    info!(run_id = %run_id, steps = plan.len(), "run started");

    let width = opts.parallelism.unwrap_or(cfg.parallelism).max(1);
    let worker = Worker {
        cfg,
        services,
        run_id: &run_id,
        meter: opts.meter.as_ref(),
    };
    let clock = Mutex::new(MonotoneClock::default());
    let n = plan.len();
    let mut state = vec![State::Pending; n];
    let mut outputs: Vec<Option<StepOutput>> = vec![None; n];
    let mut timings: Vec<Option<Timing>> = vec![None; n];
    let mut failed_pipelines: BTreeSet<PipelineKind> = BTreeSet::new();
    let mut start_order: Vec<usize> = Vec::new();
    let mut finished: BTreeMap<usize, StepRecord> = BTreeMap::new();
    let mut committed = 0usize;
    let mut skipped = Vec::new();
    let mut errors: BTreeMap<String, ServiceError> = BTreeMap::new();

    std::thread::scope(|scope| -> Result<(), RunError> {
        let (tx, rx) = mpsc::channel::<Finished>();
        let mut running = 0usize;
        loop {
            // Dispatch ready steps in plan order.
            for i in 0..n {
                if running >= width {
                    break;
                }
                if state[i] != State::Pending {
                    continue;
                }
                let step = &plan.steps[i];
                let blocked = step.deps.iter().any(|&d| matches!(state[d], State::Failed | State::Skipped))
                    || step.pipelines.is_subset(&failed_pipelines);
                if blocked {
                    state[i] = State::Skipped;
                    skipped.push(step.id.clone());
                    continue;
                }
                let ready = step.deps.iter().all(|&d| state[d] == State::Done)
                    && step.after.iter().all(|&d| matches!(state[d], State::Done | State::Failed | State::Skipped));
                if !ready {
                    continue;
                }
                state[i] = State::Running;
                running += 1;
                let inputs: Vec<StepOutput> = step.deps.iter().map(|&d| outputs[d].clone().expect("done")).collect();
                let dep_t: Vec<Timing> = step.deps.iter().map(|&d| timings[d].expect("done")).collect();
                let after_t: Vec<Timing> = step.after.iter().filter_map(|&d| timings[d]).collect();
                let t_start = clock.lock().unwrap_or_else(|p| p.into_inner()).now();
                start_order.push(i);
                let tx = tx.clone();
                let (worker, clock) = (&worker, &clock);
                debug!(step = %step.id, "dispatch");
                scope.spawn(move || {
                    let began = Instant::now();
                    let result = worker.run(step, &inputs, &dep_t, &after_t);
                    let seconds = began.elapsed().as_secs_f64();
                    let t_end = clock.lock().unwrap_or_else(|p| p.into_inner()).now();
                    let (status, err, req, resp, output) = match result {
                        Ok(r) => (StepStatus::Ok, None, r.request_digest, Some(r.response_digest), Some(r.output)),
                        Err(e) => (StepStatus::Failed, Some(e), String::new(), None, None),
                    };
                    let error = err.as_ref().map(ToString::to_string);
                    let artifacts = match &output {
                        Some(StepOutput::Dataset { .. }) | None => vec![],
                        Some(o) => vec![o.artifact().clone()],
                    };
                    let record = StepRecord {
                        step_id: step.id.clone(),
                        step: step.action.name().into(),
                        role: step.role().as_str().into(),
                        request_digest: req,
                        response_digest: resp,
                        t_start,
                        t_end,
                        seconds,
                        energy_wh: worker.meter.energy_wh(seconds),
                        deterministic: step.action.is_deterministic(),
                        status,
                        error,
                        artifacts,
                    };
                    let _ = tx.send(Finished {
                        index: i,
                        record,
                        output,
                        error: err,
                    });
                });
            }
            if running == 0 {
                break;
            }
            let done = rx.recv().expect("workers hold a sender");
            running -= 1;
            let i = done.index;
            timings[i] = Some(Timing {
                seconds: done.record.seconds,
            });
            if done.record.status == StepStatus::Ok {
                state[i] = State::Done;
                outputs[i] = done.output;
            } else {
                warn!(step = %plan.steps[i].id, error = ?done.record.error, "step failed");
                state[i] = State::Failed;
                if let Some(e) = done.error {
                    errors.insert(plan.steps[i].id.clone(), e);
                }
                failed_pipelines.extend(plan.steps[i].pipelines.iter().copied());
            }
            finished.insert(i, done.record);
            // Commit in start order so t_start stays strictly increasing.
            while committed < start_order.len() {
                let Some(rec) = finished.remove(&start_order[committed]) else {
                    break;
                };
                log.append_step(rec)?;
                committed += 1;
            }
            store.write_provenance(&log)?;
        }
        Ok(())
    })?;

    let status = if state.iter().any(|s| *s == State::Failed) {
        RunStatus::Failed
    } else {
        RunStatus::Succeeded
    };
    log.close(status);
    store.write_provenance(&log)?;

    let outputs: BTreeMap<String, StepOutput> = plan
        .steps
        .iter()
        .zip(outputs)
        .filter_map(|(s, o)| o.map(|o| (s.id.clone(), o)))
        .collect();
    let report = build_report(cfg, &log, &outputs, &skipped);
    store.put_run_file(&run_id, REPORT_FILE, &serde_json::to_vec_pretty(&report).expect("report serialises"))?;
    if let Ok(radar) = normalize_for_radar(&report.models) {
        store.put_run_file(&run_id, RADAR_FILE, &serde_json::to_vec_pretty(&radar).expect("radar serialises"))?;
    }
    info!(run_id = %run_id, status = ?status, "run finished");
    Ok(RunOutcome {
        run_id,
        plan,
        log,
        report,
        outputs,
        skipped,
        errors,
    })
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub recorded_run: String,
    pub fresh: RunOutcome,
    pub report: ReplayReport,
}

/// Re-executes a recorded run from its stored configuration under a new run id
/// and compares step digests. Recorded artifacts whose bytes changed since
/// they were written are reported against the step that wrote them.
pub fn replay(
    store: &Store,
    services: &Services,
    run_id: &str,
    opts: &RunOptions,
) -> Result<ReplayOutcome, RunError> {
    let recorded = store.read_provenance(run_id)?;
    let mut cfg = PipelineConfig::from_value(recorded.config.clone())?;
    cfg.run_id = Some(fresh_run_id(store, &format!("{run_id}-replay")));
    let tampered = store.verify_run(run_id)?;
    let fresh = run(&cfg, services, store, opts)?;
    let mut report = replay_check(&recorded, &fresh.log)?;
    let mut flagged = Vec::new();
    for a in &tampered {
        let owner = recorded
            .steps
            .iter()
            .find(|s| s.artifacts.iter().any(|r| r.kind == a.kind && r.name == a.name));
        flagged.push(StepMismatch {
            step_id: owner.map(|s| s.step_id.clone()).unwrap_or_default(),
            step: owner.map(|s| s.step.clone()).unwrap_or_default(),
            mismatch: Mismatch::TamperedArtifact {
                artifact: a.uri.clone(),
            },
        });
    }
    flagged.append(&mut report.mismatches);
    report.mismatches = flagged;
    Ok(ReplayOutcome {
        recorded_run: run_id.into(),
        fresh,
        report,
    })
}
