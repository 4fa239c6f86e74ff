//! Builds the two comparison views: a radar over several models' quality
//! attributes and a deviation heatmap from a finished run.
//!
//!     cargo run --example radar_heatmap

use std::sync::Arc;

use serde_json::json;
use xaas::core::orchestrator::{heatmap, normalize_for_radar, run, ModelAttributes, PipelineConfig, RunOptions, Services};
use xaas::core::service::LocalServices;
use xaas::core::store::Store;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = |name: &str, cost, performance, deviation, robustness, resilience| ModelAttributes {
        model: name.into(),
        cost: Some(cost),
        performance: Some(performance),
        deviation: Some(deviation),
        robustness: Some(robustness),
        resilience: Some(resilience),
    };
    let radar = normalize_for_radar(&[
        model("vit", 82.4, 0.74, 0.91, 0.21, 0.107),
        model("swin", 61.0, 0.70, 0.88, 0.34, 0.436),
        model("resnet", 40.3, 0.66, 0.80, 0.29, 0.250),
    ])?;
    for p in &radar.polygons {
        let cells: Vec<String> = p.values.iter().map(|(a, v)| format!("{a} {v:.2}")).collect();
        println!("{:<8} {}", p.model, cells.join("  "));
    }

    let dir = tempfile::tempdir()?;
    let store = Arc::new(Store::open(dir.path())?);
    let services = Services::uniform(Arc::new(LocalServices::new(store.clone())));
    let cfg = PipelineConfig::from_value(json!({
        "xai_config": {"datasets": {"synth": {
            "model_name": "refmodel",
            "algorithms": ["refgrad"],
            "synthetic": {"kind": "image", "count": 12, "seed": 3}
        }}},
        "pipelines": ["deviation", "robustness", "resilience"]
    }))?;
    let out = run(&cfg, &services, &store, &RunOptions::for_config(&cfg))?;
    for h in heatmap(&out.report) {
        println!("\nmedian prediction change for {}", h.dataset);
        for (m, model) in h.models.iter().enumerate() {
            for (p, label) in h.perturbations.iter().enumerate() {
                let row: Vec<String> = h.values[m][p]
                    .iter()
                    .map(|v| v.map_or("  -  ".into(), |v| format!("{v:.3}")))
                    .collect();
                println!("{model:<10} {label:<20} {}", row.join(" "));
            }
        }
    }
    Ok(())
}
