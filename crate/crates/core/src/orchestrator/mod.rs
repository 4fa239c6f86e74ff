//! Coordination of the assessment pipelines: configuration, planning,
//! execution against the four service roles, and report rendering.

pub mod config;
pub mod execute;
pub mod plan;
pub mod report;

pub use config::{ConfigError, PipelineConfig, PipelineKind};
pub use execute::{replay, run, ReplayOutcome, RunError, RunOptions, RunOutcome, Services, StepOutput};
pub use plan::{plan, Action, EvalStep, PipelinePlan, PlanError, PlanStep, Source};
pub use report::{heatmap, normalize_for_radar, to_csv, Attribute, HeatmapData, ModelAttributes, QualityReport, RadarData};
