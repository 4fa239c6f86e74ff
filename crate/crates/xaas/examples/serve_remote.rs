//! Starts a gateway serving every role on an ephemeral port and drives a run
//! through it over HTTP, as a distributed deployment would.
//!
//!     cargo run --example serve_remote

use std::sync::Arc;
use std::time::Duration;

use serde_json::json;
use xaas::core::orchestrator::{run, PipelineConfig, RunOptions, Services};
use xaas::core::service::{LocalServices, Role, ServiceApi};
use xaas::core::store::Store;
use xaas::gateway::{spawn, HttpClient, Served};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let store = Arc::new(Store::open(dir.path())?);
    let server = spawn(
        Arc::new(LocalServices::new(store.clone())),
        Served::All,
        "127.0.0.1:0".parse()?,
        Duration::from_secs(60),
    )?;
    println!("gateway listening on {}", server.url());

    let timeout = Duration::from_secs(60);
    let client = |role| -> Result<Arc<dyn ServiceApi>, Box<dyn std::error::Error>> {
        Ok(Arc::new(HttpClient::new(&server.url(), role, timeout)?))
    };
    let services = Services {
        data: client(Role::Data)?,
        model: client(Role::Model)?,
        xai: client(Role::Xai)?,
        eval: client(Role::Eval)?,
    };
    println!("health: {:?}", services.model.health()?);

    let cfg = PipelineConfig::from_value(json!({
        "xai_config": {"datasets": {"synth": {
            "model_name": "refmodel",
            "algorithms": ["refgrad"],
            "synthetic": {"kind": "image", "count": 8, "seed": 1}
        }}},
        "pipelines": ["performance", "deviation", "resilience"],
        "perturbations": [{"kind": "gaussian_noise", "severity": 2, "seed": 5}, {"kind": "pixelate", "severity": 3}]
    }))?;
    let out = run(&cfg, &services, &store, &RunOptions::for_config(&cfg))?;
    for row in &out.report.rows {
        println!(
            "{:<20} f1 {:?} deviation {:?} resilience {:?}",
            row.perturbation.as_deref().unwrap_or("clean"),
            row.performance,
            row.deviation,
            row.resilience
        );
    }
    server.shutdown()?;
    Ok(())
}
