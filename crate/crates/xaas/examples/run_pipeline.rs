//! Runs all five quality pipelines in process on a small synthetic image set
//! and prints the report as CSV.
//!
//!     cargo run --example run_pipeline

use std::sync::Arc;

use serde_json::json;
use xaas::core::orchestrator::{run, to_csv, PipelineConfig, RunOptions, Services};
use xaas::core::service::LocalServices;
use xaas::core::store::Store;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let store = Arc::new(Store::open(dir.path())?);
    let services = Services::uniform(Arc::new(LocalServices::new(store.clone())));
    let cfg = PipelineConfig::from_value(json!({
        "xai_config": {"datasets": {"synth": {
            "model_name": "refmodel",
            "algorithms": ["refgrad"],
            "synthetic": {"kind": "image", "count": 16, "seed": 42}
        }}},
        "pipelines": ["cost", "performance", "deviation", "robustness", "resilience"]
    }))?;
    let out = run(&cfg, &services, &store, &RunOptions::for_config(&cfg))?;
    println!("run {} finished with {} steps, status {:?}", out.run_id, out.log.steps.len(), out.report.status);
    print!("{}", to_csv(&out.report)?);
    Ok(())
}
