//! Per-run provenance log and replay comparison.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::store::ArtifactRef;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProvenanceError {
    #[error("run `{0}` is closed")]
    Closed(String),
    #[error("step `{step_id}` starts at {t_start}, not after the previous step ({previous})")]
    OutOfOrder {
        step_id: String,
        t_start: DateTime<Utc>,
        previous: DateTime<Utc>,
    },
    #[error("config digest differs: recorded {recorded}, fresh {fresh}")]
    ConfigMismatch { recorded: String, fresh: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_id: String,
    pub step: String,
    pub role: String,
    pub request_digest: String,
    pub response_digest: Option<String>,
    pub t_start: DateTime<Utc>,
    pub t_end: DateTime<Utc>,
    pub seconds: f64,
    pub energy_wh: f64,
    /// False for steps whose response legitimately varies between runs (timings).
    pub deterministic: bool,
    pub status: StepStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub artifacts: Vec<ArtifactRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceLog {
    pub run_id: String,
    pub config_digest: String,
    /// Normalised configuration; replay re-executes from it.
    pub config: Value,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_step: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub steps: Vec<StepRecord>,
}

impl ProvenanceLog {
    pub fn new(run_id: impl Into<String>, config_digest: impl Into<String>, config: Value) -> Self {
        Self {
            run_id: run_id.into(),
            config_digest: config_digest.into(),
            config,
            status: RunStatus::Running,
            failed_step: None,
            error: None,
            steps: Vec::new(),
        }
    }

    pub fn last_start(&self) -> Option<DateTime<Utc>> {
        self.steps.last().map(|s| s.t_start)
    }

    /// Appends a step; start times must be strictly increasing.
    pub fn append_step(&mut self, step: StepRecord) -> Result<(), ProvenanceError> {
        if self.status != RunStatus::Running {
            return Err(ProvenanceError::Closed(self.run_id.clone()));
        }
        if let Some(previous) = self.last_start() {
            if step.t_start <= previous {
                return Err(ProvenanceError::OutOfOrder {
                    step_id: step.step_id,
                    t_start: step.t_start,
                    previous,
                });
            }
        }
        if step.status == StepStatus::Failed && self.failed_step.is_none() {
            self.failed_step = Some(step.step_id.clone());
            self.error = step.error.clone();
        }
        self.steps.push(step);
        Ok(())
    }

    pub fn close(&mut self, status: RunStatus) {
        self.status = status;
    }

    pub fn step(&self, step_id: &str) -> Option<&StepRecord> {
        self.steps.iter().find(|s| s.step_id == step_id)
    }
}

/// Monotone clock: never returns a time at or before the previous one.
#[derive(Debug, Default)]
pub struct MonotoneClock {
    last: Option<DateTime<Utc>>,
}

impl MonotoneClock {
    pub fn now(&mut self) -> DateTime<Utc> {
        let mut t = Utc::now();
        if let Some(last) = self.last {
            if t <= last {
                t = last + Duration::nanoseconds(1);
            }
        }
        self.last = Some(t);
        t
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Mismatch {
    MissingInFresh,
    ExtraInFresh,
    Request { recorded: String, fresh: String },
    Response { recorded: Option<String>, fresh: Option<String> },
    Status,
    /// A stored artifact no longer matches the digest recorded for this step.
    TamperedArtifact { artifact: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepMismatch {
    pub step_id: String,
    pub step: String,
    #[serde(flatten)]
    pub mismatch: Mismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReplayReport {
    pub matched: usize,
    pub skipped_nondeterministic: usize,
    pub mismatches: Vec<StepMismatch>,
}

impl ReplayReport {
    pub fn is_clean(&self) -> bool {
        self.mismatches.is_empty()
    }

    pub fn first_mismatch(&self) -> Option<&StepMismatch> {
        self.mismatches.first()
    }
}

/// Per-step digest comparison in the recorded log's order; steps only in the
/// fresh run are listed last.
pub fn compare_steps(recorded: &ProvenanceLog, fresh: &ProvenanceLog) -> ReplayReport {
    let fresh_by_id: BTreeMap<&str, &StepRecord> = fresh.steps.iter().map(|s| (s.step_id.as_str(), s)).collect();
    let mut report = ReplayReport::default();
    for r in &recorded.steps {
        let mismatch = |m| StepMismatch {
            step_id: r.step_id.clone(),
            step: r.step.clone(),
            mismatch: m,
        };
        let Some(f) = fresh_by_id.get(r.step_id.as_str()) else {
            report.mismatches.push(mismatch(Mismatch::MissingInFresh));
            continue;
        };
        if r.status != f.status {
            report.mismatches.push(mismatch(Mismatch::Status));
        } else if r.request_digest != f.request_digest && r.deterministic {
            report.mismatches.push(mismatch(Mismatch::Request {
                recorded: r.request_digest.clone(),
                fresh: f.request_digest.clone(),
            }));
        } else if !r.deterministic || !f.deterministic {
            report.skipped_nondeterministic += 1;
        } else if r.response_digest != f.response_digest {
            report.mismatches.push(mismatch(Mismatch::Response {
                recorded: r.response_digest.clone(),
                fresh: f.response_digest.clone(),
            }));
        } else {
            report.matched += 1;
        }
    }
    let recorded_ids: std::collections::BTreeSet<&str> = recorded.steps.iter().map(|s| s.step_id.as_str()).collect();
    for f in &fresh.steps {
        if !recorded_ids.contains(f.step_id.as_str()) {
            report.mismatches.push(StepMismatch {
                step_id: f.step_id.clone(),
                step: f.step.clone(),
                mismatch: Mismatch::ExtraInFresh,
            });
        }
    }
    report
}

/// [`compare_steps`] after checking both runs used the same configuration.
pub fn replay_check(recorded: &ProvenanceLog, fresh: &ProvenanceLog) -> Result<ReplayReport, ProvenanceError> {
    if recorded.config_digest != fresh.config_digest {
        return Err(ProvenanceError::ConfigMismatch {
            recorded: recorded.config_digest.clone(),
            fresh: fresh.config_digest.clone(),
        });
    }
    Ok(compare_steps(recorded, fresh))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(id: &str, t: DateTime<Utc>, resp: &str) -> StepRecord {
        StepRecord {
            step_id: id.into(),
            step: "predict".into(),
            role: "model".into(),
            request_digest: format!("req-{id}"),
            response_digest: Some(resp.into()),
            t_start: t,
            t_end: t,
            seconds: 0.0,
            energy_wh: 0.0,
            deterministic: true,
            status: StepStatus::Ok,
            error: None,
            artifacts: vec![],
        }
    }

    fn log_with(steps: &[(&str, &str)]) -> ProvenanceLog {
        let mut clock = MonotoneClock::default();
        let mut log = ProvenanceLog::new("r", "cfg", Value::Null);
        for (id, resp) in steps {
            log.append_step(step(id, clock.now(), resp)).unwrap();
        }
        log
    }

    #[test]
    fn append_and_ordering() {
        let mut log = ProvenanceLog::new("r", "cfg", Value::Null);
        let t0 = Utc::now();
        log.append_step(step("a", t0, "x")).unwrap();
        assert_eq!(log.steps.len(), 1);
        let err = log.append_step(step("b", t0 - Duration::seconds(1), "y")).unwrap_err();
        assert!(matches!(err, ProvenanceError::OutOfOrder { .. }));
        assert!(log.append_step(step("c", t0, "y")).is_err());
        log.close(RunStatus::Succeeded);
        assert!(matches!(
            log.append_step(step("d", t0 + Duration::seconds(1), "z")),
            Err(ProvenanceError::Closed(_))
        ));
    }

    #[test]
    fn clock_is_strictly_monotone() {
        let mut c = MonotoneClock::default();
        let mut prev = c.now();
        for _ in 0..1000 {
            let t = c.now();
            assert!(t > prev);
            prev = t;
        }
    }

    #[test]
    fn replay_identical_truncated_and_changed() {
        let a = log_with(&[("s1", "x"), ("s2", "y"), ("s3", "z")]);
        let b = log_with(&[("s1", "x"), ("s2", "y"), ("s3", "z")]);
        let r = replay_check(&a, &b).unwrap();
        assert!(r.is_clean());
        assert_eq!(r.matched, 3);

        let truncated = log_with(&[("s1", "x"), ("s2", "y")]);
        let r = replay_check(&a, &truncated).unwrap();
        assert_eq!(r.mismatches.len(), 1);
        assert_eq!(r.mismatches[0].mismatch, Mismatch::MissingInFresh);

        let changed = log_with(&[("s1", "x"), ("s2", "other"), ("s3", "z")]);
        let r = replay_check(&a, &changed).unwrap();
        assert_eq!(r.first_mismatch().unwrap().step_id, "s2");

        let mut other_cfg = b.clone();
        other_cfg.config_digest = "different".into();
        assert!(matches!(replay_check(&a, &other_cfg), Err(ProvenanceError::ConfigMismatch { .. })));
    }

    #[test]
    fn nondeterministic_steps_skipped() {
        let mut a = log_with(&[("s1", "x"), ("cost", "t1")]);
        let mut b = log_with(&[("s1", "x"), ("cost", "t2")]);
        a.steps[1].deterministic = false;
        b.steps[1].deterministic = false;
        let r = replay_check(&a, &b).unwrap();
        assert!(r.is_clean());
        assert_eq!(r.skipped_nondeterministic, 1);
    }

    #[test]
    fn serde_round_trip() {
        let a = log_with(&[("s1", "x")]);
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<ProvenanceLog>(&json).unwrap(), a);
    }
}
