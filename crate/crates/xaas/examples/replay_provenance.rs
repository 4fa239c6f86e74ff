//! Records a run, replays it from its provenance log, then tampers with one
//! stored artifact and shows the replay pinning the change on its step.
//!
//!     cargo run --example replay_provenance

use std::sync::Arc;

use serde_json::json;
use xaas::core::orchestrator::{replay, run, PipelineConfig, RunOptions, Services};
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
            "synthetic": {"kind": "image", "count": 6, "seed": 4}
        }}},
        "perturbations": [{"kind": "pixelate", "severity": 2}]
    }))?;
    let opts = RunOptions::for_config(&cfg);
    let out = run(&cfg, &services, &store, &opts)?;
    let log = store.read_provenance(&out.run_id)?;
    for s in &log.steps {
        println!("{:<44} {:<5} {:.3}s {}", s.step_id, s.role, s.seconds, s.response_digest.as_deref().unwrap_or("-"));
    }

    let rep = replay(&store, &services, &out.run_id, &opts)?;
    println!(
        "\nreplay: {} matched, {} skipped as non-deterministic, {} mismatches",
        rep.report.matched,
        rep.report.skipped_nondeterministic,
        rep.report.mismatches.len()
    );

    let masks = dir.path().join("runs").join(&out.run_id).join("artifacts/masks");
    let victim = std::fs::read_dir(masks)?.next().unwrap()?.path();
    let mut bytes = std::fs::read(&victim)?;
    let at = bytes.len() / 2;
    bytes[at] ^= 1;
    std::fs::write(&victim, bytes)?;
    let rep = replay(&store, &services, &out.run_id, &opts)?;
    for m in &rep.report.mismatches {
        println!("mismatch at {}: {:?}", m.step_id, m.mismatch);
    }
    Ok(())
}
