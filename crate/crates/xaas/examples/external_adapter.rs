//! Plugs a third-party model into the model and explainer roles through the
//! adapter interface. Here the "external" model is a constant-bias classifier
//! built in process; over HTTP the same trait is implemented by the gateway
//! client for adapters registered with `POST /registry`.
//!
//!     cargo run --example external_adapter

use std::sync::Arc;

use xaas::core::service::{Adapter, LocalServices, ServiceApi, ServiceError};
use xaas::core::store::Store;
use xaas::core::synthetic;
use xaas::core::types::PredictionRecord;
use xaas::core::wire::{ExplainRequest, ExplainResponse, PredictRequest, PredictResponse, WireTensor};

/// Predicts from the mean image brightness and explains with the brightness itself.
struct Brightness;

impl Adapter for Brightness {
    fn predict(&self, model: &str, req: &PredictRequest) -> Result<PredictResponse, ServiceError> {
        let ds = req.dataset.as_ref().expect("adapters get the dataset inline").to_dataset().map_err(|e| ServiceError::Invalid(e.to_string()))?;
        let predictions = ds
            .as_images()
            .unwrap()
            .iter()
            .map(|img| {
                let mean = img.data().iter().map(|&v| f64::from(v)).sum::<f64>() / img.data().len() as f64;
                let logits = (0..10).map(|c| -((c as f64 / 9.0 - mean) * 8.0).powi(2)).collect();
                PredictionRecord::from_logits(logits).unwrap()
            })
            .collect();
        Ok(PredictResponse {
            model: model.into(),
            dataset_id: req.dataset_id.clone(),
            predictions,
            artifact: None,
        })
    }

    fn explain(&self, method: &str, req: &ExplainRequest) -> Result<ExplainResponse, ServiceError> {
        let ds = req.dataset.as_ref().expect("adapters get the dataset inline").to_dataset().map_err(|e| ServiceError::Invalid(e.to_string()))?;
        let images = ds.as_images().unwrap();
        let ids = req.sample_ids.clone().unwrap_or_else(|| (0..images.len()).collect());
        let masks = ids
            .iter()
            .map(|&i| {
                let g = images[i].to_gray();
                WireTensor::from_f32(vec![g.height, g.width], &g.values.iter().map(|&v| v as f32).collect::<Vec<_>>())
            })
            .collect();
        Ok(ExplainResponse {
            method: method.into(),
            model: req.model.clone(),
            dataset_id: req.dataset_id.clone(),
            classes: vec![0; ids.len()],
            sample_ids: ids,
            masks: Some(masks),
            importances: None,
            artifact: None,
        })
    }

    fn base_url(&self) -> &str {
        "inproc://brightness"
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let store = Arc::new(Store::open(dir.path())?);
    let local = LocalServices::new(store.clone());
    local.register_adapter("brightness", Arc::new(Brightness))?;
    println!("registry: {:?}", local.registry()?);

    let id = store.put_dataset(&synthetic::image_dataset(5, 1))?.id;
    let preds = local.predict(
        "brightness",
        &PredictRequest {
            dataset_id: id.clone(),
            run_id: None,
            artifact: None,
            dataset: None,
        },
    )?;
    for (i, p) in preds.predictions.iter().enumerate() {
        println!("sample {i}: class {} p {:.3}", p.top1_index, p.top1_prob);
    }
    let ex = local.explain(
        "brightness",
        &ExplainRequest {
            model: "brightness".into(),
            dataset_id: id,
            sample_ids: Some(vec![0, 3]),
            run_id: None,
            artifact: None,
            dataset: None,
        },
    )?;
    println!("explained samples {:?} with {} masks", ex.sample_ids, ex.masks.map_or(0, |m| m.len()));
    Ok(())
}
