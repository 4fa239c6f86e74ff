//! Domain types shared by every stage of an assessment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of colour channels carried by every [`TensorImage`].
pub const CHANNELS: usize = 3;

/// Tolerance used when checking that a probability vector is a softmax.
pub const PROB_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TypeError {
    #[error("empty vector")]
    Empty,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("data length {got} does not match {height}x{width}x{channels}")]
    Shape {
        height: usize,
        width: usize,
        channels: usize,
        got: usize,
    },
    #[error("probabilities do not match softmax(logits) (max deviation {0:e})")]
    NotSoftmax(f64),
    #[error("top-1 fields inconsistent with probabilities")]
    TopOne,
    #[error("tabular matrix: {0}")]
    Tabular(String),
    #[error("invalid perturbation spec: {0}")]
    Perturbation(String),
    #[error("negative cost field `{0}`")]
    NegativeCost(&'static str),
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, TypeError> {
    if logits.is_empty() {
        return Err(TypeError::Empty);
    }
    if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
        return Err(TypeError::NonFinite(i));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Index of the largest entry; ties resolve to the lower index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// An RGB image stored row-major as `height x width x 3` floats in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl TensorImage {
    /// Builds an image, clamping every value into `[0, 1]`.
    pub fn new(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self, TypeError> {
        if data.len() != height * width * CHANNELS {
            return Err(TypeError::Shape {
                height,
                width,
                channels: CHANNELS,
                got: data.len(),
            });
        }
        for (i, v) in data.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(TypeError::NonFinite(i));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                for c in 0..CHANNELS {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, data).expect("from_fn produces a well-shaped buffer")
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self::from_fn(height, width, |_, _, _| value)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * CHANNELS + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.index(y, x, c)]
    }

    /// Pixel values widened to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    /// Channel-mean grayscale view.
    pub fn to_gray(&self) -> GrayImage {
        let values = self
            .data
            .chunks_exact(CHANNELS)
            .map(|px| px.iter().map(|&v| f64::from(v)).sum::<f64>() / CHANNELS as f64)
            .collect();
        GrayImage {
            height: self.height,
            width: self.width,
            values,
        }
    }

    /// Little-endian float32 encoding of the pixel buffer.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Self, TypeError> {
        if bytes.len() % 4 != 0 {
            return Err(TypeError::Shape {
                height,
                width,
                channels: CHANNELS,
                got: bytes.len() / 4,
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Self::new(height, width, data)
    }
}

/// Single-channel image used by the similarity metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self, TypeError> {
        if values.len() != height * width {
            return Err(TypeError::Shape {
                height,
                width,
                channels: 1,
                got: values.len(),
            });
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical { vocabulary: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl Column {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Numeric,
        }
    }

    pub fn categorical(name: impl Into<String>, vocabulary: &[&str]) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical {
                vocabulary: vocabulary.iter().map(|s| s.to_string()).collect(),
            },
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.kind, ColumnKind::Numeric)
    }
}

/// Rectangular table of numeric and categorical features.
///
/// Cells are stored row-major as `f64`; a categorical cell holds the index of
/// its value in the column vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMatrix {
    columns: Vec<Column>,
    rows: usize,
    data: Vec<f64>,
}

impl TabularMatrix {
    pub fn new(columns: Vec<Column>, data: Vec<f64>) -> Result<Self, TypeError> {
        if columns.is_empty() {
            return Err(TypeError::Tabular("no columns".into()));
        }
        if data.len() % columns.len() != 0 {
            return Err(TypeError::Tabular(format!(
                "{} cells do not fill {} columns",
                data.len(),
                columns.len()
            )));
        }
        let rows = data.len() / columns.len();
        for (i, v) in data.iter().enumerate() {
            let col = &columns[i % columns.len()];
            match &col.kind {
                ColumnKind::Numeric if !v.is_finite() => return Err(TypeError::NonFinite(i)),
                ColumnKind::Categorical { vocabulary } => {
                    if v.fract() != 0.0 || *v < 0.0 || *v as usize >= vocabulary.len() {
                        return Err(TypeError::Tabular(format!(
                            "cell {i} of `{}` is not a vocabulary index",
                            col.name
                        )));
                    }
                }
                _ => {}
            }
        }
        Ok(Self {
            columns,
            rows,
            data,
        })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let n = self.columns.len();
        &self.data[r * n..(r + 1) * n]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.columns.len() + c]
    }

    /// Same schema with replaced cells; cells are re-validated.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self, TypeError> {
        Self::new(self.columns.clone(), data)
    }

    /// Selects a subset of rows by index.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let data = rows.iter().flat_map(|&r| self.row(r).iter().copied()).collect();
        Self {
            columns: self.columns.clone(),
            rows: rows.len(),
            data,
        }
    }
}

/// Output of one model inference on one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPrediction")]
pub struct PredictionRecord {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub top1_index: usize,
    pub top1_prob: f64,
}

#[derive(Deserialize)]
struct RawPrediction {
    logits: Vec<f64>,
    probs: Vec<f64>,
    top1_index: usize,
    top1_prob: f64,
}

impl TryFrom<RawPrediction> for PredictionRecord {
    type Error = TypeError;

    fn try_from(raw: RawPrediction) -> Result<Self, TypeError> {
        let record = PredictionRecord::new(raw.logits, raw.probs)?;
        if record.top1_index != raw.top1_index || record.top1_prob != raw.top1_prob {
            return Err(TypeError::TopOne);
        }
        Ok(record)
    }
}

impl PredictionRecord {
    pub fn from_logits(logits: Vec<f64>) -> Result<Self, TypeError> {
        let probs = softmax(&logits)?;
        let top1_index = argmax(&probs);
        let top1_prob = probs[top1_index];
        Ok(Self {
            logits,
            probs,
            top1_index,
            top1_prob,
        })
    }

    /// Checks externally supplied probabilities against `softmax(logits)`.
    pub fn new(logits: Vec<f64>, probs: Vec<f64>) -> Result<Self, TypeError> {
        let expected = softmax(&logits)?;
        if expected.len() != probs.len() {
            return Err(TypeError::NotSoftmax(f64::INFINITY));
        }
        let dev = expected
            .iter()
            .zip(&probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if !(dev <= PROB_TOLERANCE) {
            return Err(TypeError::NotSoftmax(dev));
        }
        let top1_index = argmax(&probs);
        let top1_prob = probs[top1_index];
        Ok(Self {
            logits,
            probs,
            top1_index,
            top1_prob,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.probs.len()
    }
}

/// Unnormalised 2-D importance grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMask {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl SaliencyMask {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self, TypeError> {
        if values.len() != height * width {
            return Err(TypeError::Shape {
                height,
                width,
                channels: 1,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(TypeError::NonFinite(i));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// Per-feature importance vector produced by a tabular explainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationSummary {
    pub importances: Vec<f64>,
    pub method_id: String,
}

impl ExplanationSummary {
    pub fn new(method_id: impl Into<String>, importances: Vec<f64>) -> Self {
        Self {
            importances,
            method_id: method_id.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    GaussianNoise,
    DefocusBlur,
    Pixelate,
    TabularNoise,
    Identity,
}

impl PerturbationKind {
    pub fn is_stochastic(self) -> bool {
        matches!(self, Self::GaussianNoise | Self::TabularNoise)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::GaussianNoise => "gaussian_noise",
            Self::DefocusBlur => "defocus_blur",
            Self::Pixelate => "pixelate",
            Self::TabularNoise => "tabular_noise",
            Self::Identity => "identity",
        }
    }
}

impl std::fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A corruption kind at a severity level, with the seed for stochastic kinds.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub severity: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl PerturbationSpec {
    pub fn new(kind: PerturbationKind, severity: u8, seed: Option<u64>) -> Result<Self, TypeError> {
        let spec = Self {
            kind,
            severity,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn identity() -> Self {
        Self {
            kind: PerturbationKind::Identity,
            severity: 0,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), TypeError> {
        match (self.kind, self.severity) {
            (PerturbationKind::Identity, 0) => {}
            (PerturbationKind::Identity, s) => {
                return Err(TypeError::Perturbation(format!(
                    "identity takes severity 0, got {s}"
                )))
            }
            (_, 1..=3) => {}
            (k, s) => {
                return Err(TypeError::Perturbation(format!(
                    "{k} severity must be in 1..=3, got {s}"
                )))
            }
        }
        if self.kind.is_stochastic() && self.seed.is_none() {
            return Err(TypeError::Perturbation(format!("{} requires a seed", self.kind)));
        }
        Ok(())
    }

    /// Short filesystem-safe label, e.g. `gaussian_noise-2`.
    pub fn label(&self) -> String {
        match self.seed {
            Some(seed) => format!("{}-{}-s{}", self.kind, self.severity, seed),
            None => format!("{}-{}", self.kind, self.severity),
        }
    }
}

/// Time (seconds) and energy (watt-hours) spent in each pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostRecord {
    pub t_ml: f64,
    pub t_xai: f64,
    pub t_eval: f64,
    pub e_ml: f64,
    pub e_xai: f64,
}

impl CostRecord {
    pub fn validate(&self) -> Result<(), TypeError> {
        for (name, v) in [
            ("t_ml", self.t_ml),
            ("t_xai", self.t_xai),
            ("t_eval", self.t_eval),
            ("e_ml", self.e_ml),
            ("e_xai", self.e_xai),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(TypeError::NegativeCost(name));
            }
        }
        Ok(())
    }
}
