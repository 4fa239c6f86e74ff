//! Step graph for a configuration.
//!
//! Steps are keyed by deterministic ids built from names in the config. A step
//! requested by several pipelines appears once and records every pipeline
//! that needs it.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use super::config::{PipelineConfig, PipelineKind, SyntheticSource};
use crate::service::Role;
use crate::types::{PerturbationKind, PerturbationSpec};

/// A dataset as seen by the plan: the configured one or one of its perturbed
/// variants.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Source {
    pub dataset: String,
    /// Perturbation label; `None` for the clean dataset.
    pub variant: Option<String>,
}

impl Source {
    pub fn original(dataset: &str) -> Self {
        Self {
            dataset: dataset.into(),
            variant: None,
        }
    }

    pub fn path(&self) -> String {
        match &self.variant {
            Some(v) => format!("{}/{v}", self.dataset),
            None => self.dataset.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum Action {
    Dataset {
        dataset: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        synthetic: Option<SyntheticSource>,
    },
    Perturb {
        source: Source,
        spec: PerturbationSpec,
    },
    Predict {
        model: String,
        source: Source,
    },
    Explain {
        method: String,
        model: String,
        source: Source,
    },
    Mask {
        method: String,
        model: String,
        source: Source,
    },
    PredictMasked {
        method: String,
        model: String,
        source: Source,
    },
    Eval(EvalStep),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum EvalStep {
    Performance { model: String, dataset: String },
    Deviation { model: String, method: String, source: Source },
    PredictionChange { model: String, method: String, source: Source },
    Ks { model: String, source: Source },
    Robustness { model: String, dataset: String, kind: PerturbationKind, variants: Vec<String> },
    Resilience { model: String, method: String, source: Source },
    Cost { model: String, method: String, dataset: String },
}

impl EvalStep {
    pub fn metric(&self) -> &'static str {
        match self {
            EvalStep::Performance { .. } => "performance",
            EvalStep::Deviation { .. } => "deviation",
            EvalStep::PredictionChange { .. } => "prediction_change",
            EvalStep::Ks { .. } => "ks",
            EvalStep::Robustness { .. } => "robustness",
            EvalStep::Resilience { .. } => "resilience",
            EvalStep::Cost { .. } => "cost",
        }
    }

    pub fn model(&self) -> &str {
        match self {
            EvalStep::Performance { model, .. }
            | EvalStep::Deviation { model, .. }
            | EvalStep::PredictionChange { model, .. }
            | EvalStep::Ks { model, .. }
            | EvalStep::Robustness { model, .. }
            | EvalStep::Resilience { model, .. }
            | EvalStep::Cost { model, .. } => model,
        }
    }

    pub fn method(&self) -> Option<&str> {
        match self {
            EvalStep::Deviation { method, .. }
            | EvalStep::PredictionChange { method, .. }
            | EvalStep::Resilience { method, .. }
            | EvalStep::Cost { method, .. } => Some(method),
            _ => None,
        }
    }

    pub fn dataset(&self) -> &str {
        match self {
            EvalStep::Performance { dataset, .. }
            | EvalStep::Robustness { dataset, .. }
            | EvalStep::Cost { dataset, .. } => dataset,
            EvalStep::Deviation { source, .. }
            | EvalStep::PredictionChange { source, .. }
            | EvalStep::Ks { source, .. }
            | EvalStep::Resilience { source, .. } => &source.dataset,
        }
    }
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Dataset { .. } => "dataset",
            Action::Perturb { .. } => "perturb",
            Action::Predict { .. } => "predict",
            Action::Explain { .. } => "explain",
            Action::Mask { .. } => "mask",
            Action::PredictMasked { .. } => "predict_masked",
            Action::Eval(e) => e.metric(),
        }
    }

    pub fn role(&self) -> Role {
        match self {
            Action::Dataset { .. } | Action::Perturb { .. } | Action::Mask { .. } => Role::Data,
            Action::Predict { .. } | Action::PredictMasked { .. } => Role::Model,
            Action::Explain { .. } => Role::Xai,
            Action::Eval(_) => Role::Eval,
        }
    }

    /// Timing-derived results differ between runs.
    pub fn is_deterministic(&self) -> bool {
        !matches!(self, Action::Eval(EvalStep::Cost { .. }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanStep {
    pub id: String,
    pub action: Action,
    /// Steps whose outputs this step consumes.
    pub deps: Vec<usize>,
    /// Steps that must finish first without their outputs being consumed;
    /// their failure does not block this step.
    pub after: Vec<usize>,
    pub pipelines: BTreeSet<PipelineKind>,
}

impl PlanStep {
    pub fn role(&self) -> Role {
        self.action.role()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PipelinePlan {
    pub steps: Vec<PlanStep>,
}

impl PipelinePlan {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.steps.iter().position(|s| s.id == id)
    }

    pub fn get(&self, id: &str) -> Option<&PlanStep> {
        self.index_of(id).map(|i| &self.steps[i])
    }

    pub fn ids(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.id.as_str()).collect()
    }

    /// Every dependency edge points backwards, so the list order is a
    /// topological order.
    pub fn is_topological(&self) -> bool {
        self.steps
            .iter()
            .enumerate()
            .all(|(i, s)| s.deps.iter().chain(&s.after).all(|&d| d < i))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("perturbation `{label}` is listed twice")]
    DuplicatePerturbation { label: String },
}

#[derive(Default)]
struct Builder {
    plan: PipelinePlan,
    by_id: BTreeMap<String, usize>,
}

impl Builder {
    /// Adds a step unless one with `id` exists. Pipelines attach via [`Builder::claim`].
    fn add(&mut self, id: String, action: Action, deps: Vec<usize>) -> usize {
        if let Some(&i) = self.by_id.get(&id) {
            return i;
        }
        let i = self.plan.steps.len();
        self.plan.steps.push(PlanStep {
            id: id.clone(),
            action,
            deps,
            after: Vec::new(),
            pipelines: BTreeSet::new(),
        });
        self.by_id.insert(id, i);
        i
    }

    /// Marks `pipeline` as needing `i` and, transitively, its inputs.
    fn claim(&mut self, i: usize, pipeline: PipelineKind) {
        let mut stack = vec![i];
        while let Some(j) = stack.pop() {
            self.plan.steps[j].pipelines.insert(pipeline);
            stack.extend(self.plan.steps[j].deps.iter().copied());
        }
    }
}

/// Variant labels for the configured perturbations: `<kind>-<severity>`,
/// with `#2`, `#3` ... for repeated kind and severity.
pub fn variant_labels(specs: &[PerturbationSpec]) -> Result<Vec<String>, PlanError> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut full = BTreeSet::new();
    let mut out = Vec::with_capacity(specs.len());
    for s in specs {
        let base = format!("{}-{}", s.kind, s.severity);
        if !full.insert(s.label()) {
            return Err(PlanError::DuplicatePerturbation { label: s.label() });
        }
        let n = seen.entry(base.clone()).or_insert(0);
        *n += 1;
        out.push(if *n == 1 { base } else { format!("{base}#{n}") });
    }
    Ok(out)
}

struct Ctx<'a> {
    b: Builder,
    dataset: &'a str,
    dataset_step: usize,
    perturb_steps: BTreeMap<String, usize>,
}

impl Ctx<'_> {
    fn source_step(&self, src: &Source) -> usize {
        match &src.variant {
            Some(v) => self.perturb_steps[v],
            None => self.dataset_step,
        }
    }

    fn predict(&mut self, model: &str, src: &Source, p: PipelineKind) -> usize {
        let dep = self.source_step(src);
        let i = self.b.add(
            format!("predict/{model}/{}", src.path()),
            Action::Predict {
                model: model.into(),
                source: src.clone(),
            },
            vec![dep],
        );
        self.b.claim(i, p);
        i
    }

    fn explain(&mut self, method: &str, model: &str, src: &Source, p: PipelineKind) -> usize {
        let dep = self.source_step(src);
        let i = self.b.add(
            format!("explain/{method}/{model}/{}", src.path()),
            Action::Explain {
                method: method.into(),
                model: model.into(),
                source: src.clone(),
            },
            vec![dep],
        );
        self.b.claim(i, p);
        i
    }

    /// explain → mask → predict(masked) → deviation and prediction change.
    fn deviation(&mut self, method: &str, model: &str, src: &Source, p: PipelineKind) -> usize {
        let data = self.source_step(src);
        let pred = self.predict(model, src, p);
        let expl = self.explain(method, model, src, p);
        let suffix = format!("{method}/{model}/{}", src.path());
        let mask = self.b.add(
            format!("mask/{suffix}"),
            Action::Mask {
                method: method.into(),
                model: model.into(),
                source: src.clone(),
            },
            vec![data, expl],
        );
        let masked = self.b.add(
            format!("predict_masked/{suffix}"),
            Action::PredictMasked {
                method: method.into(),
                model: model.into(),
                source: src.clone(),
            },
            vec![mask],
        );
        let dev = self.b.add(
            format!("eval/deviation/{suffix}"),
            Action::Eval(EvalStep::Deviation {
                model: model.into(),
                method: method.into(),
                source: src.clone(),
            }),
            vec![pred, masked],
        );
        let pc = self.b.add(
            format!("eval/prediction_change/{suffix}"),
            Action::Eval(EvalStep::PredictionChange {
                model: model.into(),
                method: method.into(),
                source: src.clone(),
            }),
            vec![pred, masked],
        );
        self.b.claim(dev, p);
        self.b.claim(pc, p);
        dev
    }
}

/// Builds the step graph. Pure function of the configuration.
pub fn plan(cfg: &PipelineConfig) -> Result<PipelinePlan, PlanError> {
    let specs = cfg.perturbations();
    let labels = variant_labels(specs)?;
    let mut b = Builder::default();
    let mut order: Vec<PipelineKind> = cfg.pipelines.clone();
    order.sort();
    order.dedup();
    // The cost pipeline times every other step of its combination, so it is
    // planned last.
    order.retain(|p| *p != PipelineKind::Cost);
    let with_cost = cfg.has(PipelineKind::Cost);

    for (dataset, entry) in &cfg.xai_config.datasets {
        let models = entry.models();
        let dataset_step = b.add(
            format!("dataset/{dataset}"),
            Action::Dataset {
                dataset: dataset.clone(),
                synthetic: entry.synthetic.clone(),
            },
            vec![],
        );
        let mut ctx = Ctx {
            b,
            dataset,
            dataset_step,
            perturb_steps: BTreeMap::new(),
        };
        let orig = Source::original(dataset);
        let variants: Vec<Source> = labels
            .iter()
            .map(|l| Source {
                dataset: dataset.clone(),
                variant: Some(l.clone()),
            })
            .collect();
        let needs_perturb = order.iter().any(|p| p.needs_perturbations());
        if needs_perturb {
            for (spec, label) in specs.iter().zip(&labels) {
                let i = ctx.b.add(
                    format!("perturb/{dataset}/{label}"),
                    Action::Perturb {
                        source: orig.clone(),
                        spec: spec.clone(),
                    },
                    vec![dataset_step],
                );
                ctx.perturb_steps.insert(label.clone(), i);
            }
        }

        for &p in &order {
            match p {
                PipelineKind::Performance => {
                    for m in &models {
                        let pred = ctx.predict(m, &orig, p);
                        let e = ctx.b.add(
                            format!("eval/performance/{m}/{dataset}"),
                            Action::Eval(EvalStep::Performance {
                                model: m.clone(),
                                dataset: dataset.clone(),
                            }),
                            vec![ctx.dataset_step, pred],
                        );
                        ctx.b.claim(e, p);
                    }
                }
                PipelineKind::Deviation => {
                    for m in &models {
                        for a in &entry.algorithms {
                            ctx.deviation(a, m, &orig, p);
                        }
                    }
                }
                PipelineKind::Robustness => {
                    for m in &models {
                        let base = ctx.predict(m, &orig, p);
                        let mut by_kind: BTreeMap<PerturbationKind, (Vec<usize>, Vec<String>)> = BTreeMap::new();
                        for (src, spec) in variants.iter().zip(specs) {
                            let adv = ctx.predict(m, src, p);
                            let ks = ctx.b.add(
                                format!("eval/ks/{m}/{}", src.path()),
                                Action::Eval(EvalStep::Ks {
                                    model: m.clone(),
                                    source: src.clone(),
                                }),
                                vec![base, adv],
                            );
                            ctx.b.claim(ks, p);
                            let e = by_kind.entry(spec.kind).or_default();
                            e.0.push(adv);
                            e.1.push(src.variant.clone().expect("perturbed"));
                        }
                        for (kind, (deps, variants)) in by_kind {
                            let mut all = vec![base];
                            all.extend(deps);
                            let r = ctx.b.add(
                                format!("eval/robustness/{m}/{dataset}/{kind}"),
                                Action::Eval(EvalStep::Robustness {
                                    model: m.clone(),
                                    dataset: dataset.clone(),
                                    kind,
                                    variants,
                                }),
                                all,
                            );
                            ctx.b.claim(r, p);
                        }
                    }
                }
                PipelineKind::Resilience => {
                    for m in &models {
                        for a in &entry.algorithms {
                            let d0 = ctx.deviation(a, m, &orig, p);
                            for src in &variants {
                                let d1 = ctx.deviation(a, m, src, p);
                                let r = ctx.b.add(
                                    format!("eval/resilience/{a}/{m}/{}", src.path()),
                                    Action::Eval(EvalStep::Resilience {
                                        model: m.clone(),
                                        method: a.clone(),
                                        source: src.clone(),
                                    }),
                                    vec![d0, d1],
                                );
                                ctx.b.claim(r, p);
                            }
                        }
                    }
                }
                PipelineKind::Cost => unreachable!("planned last"),
            }
        }

        if with_cost {
            let p = PipelineKind::Cost;
            for m in &models {
                for a in &entry.algorithms {
                    let pred = ctx.predict(m, &orig, p);
                    let expl = ctx.explain(a, m, &orig, p);
                    let after: Vec<usize> = ctx
                        .b
                        .plan
                        .steps
                        .iter()
                        .enumerate()
                        .filter(|(_, s)| match &s.action {
                            Action::Eval(e) => {
                                e.dataset() == ctx.dataset
                                    && e.model() == m
                                    && e.method().is_none_or(|x| x == a)
                            }
                            _ => false,
                        })
                        .map(|(i, _)| i)
                        .collect();
                    let c = ctx.b.add(
                        format!("eval/cost/{a}/{m}/{dataset}"),
                        Action::Eval(EvalStep::Cost {
                            model: m.clone(),
                            method: a.clone(),
                            dataset: dataset.clone(),
                        }),
                        vec![pred, expl],
                    );
                    ctx.b.plan.steps[c].after = after;
                    ctx.b.claim(c, p);
                }
            }
        }
        // Perturbations no selected pipeline consumed are dropped below.
        b = ctx.b;
    }

    prune(b.plan)
}

/// Removes steps without a claiming pipeline and reindexes edges.
fn prune(plan: PipelinePlan) -> Result<PipelinePlan, PlanError> {
    let keep: Vec<bool> = plan.steps.iter().map(|s| !s.pipelines.is_empty()).collect();
    let mut new_index = vec![usize::MAX; plan.steps.len()];
    let mut n = 0;
    for (i, k) in keep.iter().enumerate() {
        if *k {
            new_index[i] = n;
            n += 1;
        }
    }
    let steps = plan
        .steps
        .into_iter()
        .enumerate()
        .filter(|(i, _)| keep[*i])
        .map(|(_, mut s)| {
            s.deps = s.deps.iter().map(|&d| new_index[d]).collect();
            s.after = s.after.iter().filter(|&&d| keep[d]).map(|&d| new_index[d]).collect();
            s
        })
        .collect();
    Ok(PipelinePlan { steps })
}
