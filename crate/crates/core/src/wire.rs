//! Request and response bodies shared by every service role.
//!
//! Bulk float payloads (images, masks) travel as base64 of little-endian
//! float32 with an explicit shape. Tabular rows and probability vectors are
//! plain JSON numbers.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetData, DatasetKind};
use crate::metrics::MetricValue;
use crate::store::ArtifactRef;
use crate::types::{
    Column, CostRecord, ExplanationSummary, PerturbationKind, PredictionRecord, SaliencyMask, TabularMatrix,
    TensorImage, CHANNELS,
};

pub const WIRE_VERSION: &str = "1";
pub const F32_LE: &str = "f32le";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("invalid base64 payload: {0}")]
    Base64(String),
    #[error("payload of {got} bytes does not match shape {shape:?}")]
    Shape { shape: Vec<usize>, got: usize },
    #[error("unsupported dtype `{0}`")]
    Dtype(String),
    #[error("invalid dataset: {0}")]
    Dataset(String),
}

/// Dense float32 array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireTensor {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub data: String,
}

impl WireTensor {
    pub fn from_f32(shape: Vec<usize>, values: &[f32]) -> Self {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            shape,
            dtype: F32_LE.into(),
            data: STANDARD.encode(bytes),
        }
    }

    pub fn to_f32(&self) -> Result<Vec<f32>, WireError> {
        if self.dtype != F32_LE {
            return Err(WireError::Dtype(self.dtype.clone()));
        }
        let bytes = STANDARD.decode(&self.data).map_err(|e| WireError::Base64(e.to_string()))?;
        let n: usize = self.shape.iter().product();
        if bytes.len() != n * 4 {
            return Err(WireError::Shape {
                shape: self.shape.clone(),
                got: bytes.len(),
            });
        }
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
            .collect())
    }

    pub fn from_image(img: &TensorImage) -> Self {
        Self::from_f32(vec![img.height(), img.width(), CHANNELS], img.data())
    }

    pub fn to_image(&self) -> Result<TensorImage, WireError> {
        match self.shape[..] {
            [h, w, c] if c == CHANNELS => {
                TensorImage::new(h, w, self.to_f32()?).map_err(|e| WireError::Dataset(e.to_string()))
            }
            _ => Err(WireError::Shape {
                shape: self.shape.clone(),
                got: 0,
            }),
        }
    }

    /// Masks are narrowed to float32 on the wire.
    pub fn from_mask(m: &SaliencyMask) -> Self {
        let v: Vec<f32> = m.values.iter().map(|&x| x as f32).collect();
        Self::from_f32(vec![m.height, m.width], &v)
    }

    pub fn to_mask(&self) -> Result<SaliencyMask, WireError> {
        match self.shape[..] {
            [h, w] => SaliencyMask::new(h, w, self.to_f32()?.into_iter().map(f64::from).collect())
                .map_err(|e| WireError::Dataset(e.to_string())),
            _ => Err(WireError::Shape {
                shape: self.shape.clone(),
                got: 0,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireTable {
    pub columns: Vec<Column>,
    /// Row-major cells; categorical cells hold the vocabulary index.
    pub rows: Vec<Vec<f64>>,
}

/// Inline dataset, used for registration and for proxying to adapters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDataset {
    pub id: String,
    pub kind: DatasetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<Vec<WireTensor>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<WireTable>,
}

impl WireDataset {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let (images, table) = match &ds.data {
            DatasetData::Images(v) => (Some(v.iter().map(WireTensor::from_image).collect()), None),
            DatasetData::Tabular(t) => (
                None,
                Some(WireTable {
                    columns: t.columns().to_vec(),
                    rows: (0..t.rows()).map(|r| t.row(r).to_vec()).collect(),
                }),
            ),
        };
        Self {
            id: ds.id.clone(),
            kind: ds.kind(),
            labels: ds.labels.clone(),
            images,
            table,
        }
    }

    pub fn to_dataset(&self) -> Result<Dataset, WireError> {
        let bad = |e: &dyn std::fmt::Display| WireError::Dataset(e.to_string());
        match (self.kind, &self.images, &self.table) {
            (DatasetKind::Image, Some(images), None) => {
                let imgs = images.iter().map(WireTensor::to_image).collect::<Result<Vec<_>, _>>()?;
                Dataset::images(self.id.clone(), imgs, self.labels.clone()).map_err(|e| bad(&e))
            }
            (DatasetKind::Tabular, None, Some(t)) => {
                let width = t.columns.len();
                if let Some(r) = t.rows.iter().find(|r| r.len() != width) {
                    return Err(WireError::Dataset(format!("row of {} cells for {width} columns", r.len())));
                }
                let m = TabularMatrix::new(t.columns.clone(), t.rows.concat()).map_err(|e| bad(&e))?;
                Dataset::tabular(self.id.clone(), m, self.labels.clone()).map_err(|e| bad(&e))
            }
            _ => Err(WireError::Dataset("kind must match exactly one of `images` or `table`".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub role: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub dataset_id: String,
    pub kind: DatasetKind,
    pub count: usize,
    pub shape: Vec<usize>,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbRequest {
    pub kind: PerturbationKind,
    pub severity: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbResponse {
    pub source_id: String,
    pub perturbed_id: String,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskRequest {
    pub run_id: String,
    /// A `masks` (images) or `summaries` (tabular) artifact of `run_id`.
    pub explanations: ArtifactRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskResponse {
    pub source_id: String,
    pub masked_id: String,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub dataset_id: String,
    /// Persist the predictions under this run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<String>,
    /// Inline copy of the dataset; set when proxying to an external adapter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<WireDataset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub model: String,
    pub dataset_id: String,
    pub predictions: Vec<PredictionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<ArtifactRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainRequest {
    pub model: String,
    pub dataset_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_ids: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<WireDataset>,
}

/// Exactly one of `masks` (image datasets) or `importances` (tabular) is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainResponse {
    pub method: String,
    pub model: String,
    pub dataset_id: String,
    pub sample_ids: Vec<usize>,
    /// Class explained for each sample: the model's top-1 prediction.
    pub classes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<Vec<WireTensor>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub importances: Option<Vec<ExplanationSummary>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<ArtifactRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryRequest {
    pub name: String,
    pub base_url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryResponse {
    pub name: String,
    pub base_url: String,
}

/// Names answered by `GET /registry`: built-ins plus registered adapters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RegistryListing {
    pub models: Vec<String>,
    pub methods: Vec<String>,
}

/// Body of `POST /eval/{metric}`. Artifact references resolve inside `run_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub run_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<String>,
    #[serde(flatten)]
    pub inputs: EvalInputs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalInputs {
    /// Predictions on the clean (or reference) dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original: Option<ArtifactRef>,
    /// Predictions to compare against `original` (masked or perturbed input).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub other: Option<ArtifactRef>,
    /// Several prediction sets (robustness severities) or metric artifacts
    /// (stability, consistency).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub set: Vec<ArtifactRef>,
    /// Dataset providing labels (performance) or the first operand (mae, ssim).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub other_dataset_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_n: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub err_model: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub err_ref: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResponse {
    #[serde(flatten)]
    pub value: MetricValue,
    /// Echo of the request inputs, so a stored metric can be recomputed offline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<EvalInputs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<ArtifactRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}
