//! Building blocks for assessing explainable-AI pipelines: data types,
//! deterministic perturbations, quality metrics, a reference model, a
//! provenance-tracking artifact store and the orchestrator that ties them
//! together.

pub mod canonical;
pub mod dataset;
pub mod energy;
pub mod metrics;
pub mod orchestrator;
pub mod perturb;
pub mod provenance;
pub mod refmodel;
pub mod rng;
pub mod service;
pub mod store;
pub mod synthetic;
pub mod types;
pub mod wire;
