//! Built-in linear-softmax reference model and its exact-gradient explainer.
//!
//! `logits = W·φ(x) + b`. For images `φ` is the per-channel mean over a 4×4
//! grid of blocks (48 features, block `(by, bx)` channel `c` at index
//! `(by * 4 + bx) * 3 + c`, blocks from [`block_starts`]). Tabular rows use
//! the identity extractor with categorical cells read as their vocabulary code.
//!
//! Parameters ship frozen in `assets/` (little-endian f64, weights row-major
//! then bias) and are regenerated only by [`generate`].

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::sha256_hex;
use crate::perturb::block_starts;
use crate::rng::{seeded_rng, standard_normal};
use crate::types::{
    softmax, ExplanationSummary, PredictionRecord, SaliencyMask, TabularMatrix, TensorImage, TypeError, CHANNELS,
};

pub const MODEL_NAME: &str = "refmodel";
pub const METHOD_NAME: &str = "refgrad";
pub const GRID: usize = 4;
pub const VISION_CLASSES: usize = 10;
pub const VISION_FEATURES: usize = GRID * GRID * CHANNELS;
pub const TABULAR_CLASSES: usize = 3;
pub const TABULAR_FEATURES: usize = 6;
pub const GENERATOR_SEED: u64 = 1234;
pub const WEIGHT_SCALE: f64 = 3.0;
pub const BIAS_SCALE: f64 = 0.5;

const VISION_BLOB: &[u8] = include_bytes!("../assets/refmodel_vision.bin");
const VISION_DESCRIPTOR: &str = include_str!("../assets/refmodel_vision.json");
const TABULAR_BLOB: &[u8] = include_bytes!("../assets/refmodel_tabular.bin");
const TABULAR_DESCRIPTOR: &str = include_str!("../assets/refmodel_tabular.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("expected {expected} features, got {got}")]
    FeatureLength { expected: usize, got: usize },
    #[error("class {class} out of range for {classes} classes")]
    InvalidClass { class: usize, classes: usize },
    #[error("image {height}x{width} too small for a {grid}x{grid} block grid")]
    ImageTooSmall { height: usize, width: usize, grid: usize },
    #[error("extractor does not accept this sample kind")]
    WrongKind,
    #[error("corrupt model asset: {0}")]
    Asset(String),
    #[error(transparent)]
    Type(#[from] TypeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureExtractor {
    BlockMeans { grid: usize },
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub seed: u64,
    pub weight_scale: f64,
    pub bias_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub name: String,
    pub n_classes: usize,
    pub n_features: usize,
    pub extractor: FeatureExtractor,
    pub layout: String,
    pub generator: Generator,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmaxModel {
    n_classes: usize,
    n_features: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    extractor: FeatureExtractor,
}

impl LinearSoftmaxModel {
    pub fn new(
        n_classes: usize,
        n_features: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        extractor: FeatureExtractor,
    ) -> Result<Self, ModelError> {
        if weights.len() != n_classes * n_features || bias.len() != n_classes {
            return Err(ModelError::Asset(format!(
                "{} weights and {} biases for {n_classes}x{n_features}",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(ModelError::Asset("non-finite parameter".into()));
        }
        if let FeatureExtractor::BlockMeans { grid } = extractor {
            if grid * grid * CHANNELS != n_features {
                return Err(ModelError::Asset(format!("grid {grid} does not give {n_features} features")));
            }
        }
        Ok(Self {
            n_classes,
            n_features,
            weights,
            bias,
            extractor,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn extractor(&self) -> FeatureExtractor {
        self.extractor
    }

    pub fn weight(&self, class: usize, feature: usize) -> f64 {
        self.weights[class * self.n_features + feature]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Parameters in asset layout.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.weights.iter().chain(&self.bias).flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>, ModelError> {
        if features.len() != self.n_features {
            return Err(ModelError::FeatureLength {
                expected: self.n_features,
                got: features.len(),
            });
        }
        Ok((0..self.n_classes)
            .map(|k| {
                let row = &self.weights[k * self.n_features..(k + 1) * self.n_features];
                row.iter().zip(features).map(|(w, x)| w * x).sum::<f64>() + self.bias[k]
            })
            .collect())
    }

    pub fn predict_features(&self, features: &[f64]) -> Result<PredictionRecord, ModelError> {
        Ok(PredictionRecord::from_logits(self.logits(features)?)?)
    }

    fn grid(&self) -> Result<usize, ModelError> {
        match self.extractor {
            FeatureExtractor::BlockMeans { grid } => Ok(grid),
            FeatureExtractor::Identity => Err(ModelError::WrongKind),
        }
    }

    /// Block-mean features of an `h x w x 3` buffer.
    pub fn pixel_features(&self, height: usize, width: usize, pixels: &[f64]) -> Result<Vec<f64>, ModelError> {
        let grid = self.grid()?;
        if height < grid || width < grid {
            return Err(ModelError::ImageTooSmall { height, width, grid });
        }
        if pixels.len() != height * width * CHANNELS {
            return Err(ModelError::FeatureLength {
                expected: height * width * CHANNELS,
                got: pixels.len(),
            });
        }
        let rows = block_starts(height, grid);
        let cols = block_starts(width, grid);
        let mut phi = vec![0.0; grid * grid * CHANNELS];
        for by in 0..grid {
            for bx in 0..grid {
                let n = ((rows[by + 1] - rows[by]) * (cols[bx + 1] - cols[bx])) as f64;
                for y in rows[by]..rows[by + 1] {
                    for x in cols[bx]..cols[bx + 1] {
                        for c in 0..CHANNELS {
                            phi[(by * grid + bx) * CHANNELS + c] += pixels[(y * width + x) * CHANNELS + c];
                        }
                    }
                }
                for c in 0..CHANNELS {
                    phi[(by * grid + bx) * CHANNELS + c] /= n;
                }
            }
        }
        Ok(phi)
    }

    pub fn predict_pixels(&self, height: usize, width: usize, pixels: &[f64]) -> Result<PredictionRecord, ModelError> {
        self.predict_features(&self.pixel_features(height, width, pixels)?)
    }

    pub fn predict_image(&self, img: &TensorImage) -> Result<PredictionRecord, ModelError> {
        self.predict_pixels(img.height(), img.width(), &img.to_f64())
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<PredictionRecord, ModelError> {
        if self.extractor != FeatureExtractor::Identity {
            return Err(ModelError::WrongKind);
        }
        self.predict_features(row)
    }

    pub fn predict_table(&self, tab: &TabularMatrix) -> Result<Vec<PredictionRecord>, ModelError> {
        (0..tab.rows()).map(|r| self.predict_row(tab.row(r))).collect()
    }

    /// `∂p_k/∂φ = p_k (W_k − Σ_j p_j W_j)`.
    pub fn feature_gradient(&self, features: &[f64], class: usize) -> Result<Vec<f64>, ModelError> {
        if class >= self.n_classes {
            return Err(ModelError::InvalidClass {
                class,
                classes: self.n_classes,
            });
        }
        let probs = softmax(&self.logits(features)?)?;
        let pk = probs[class];
        Ok((0..self.n_features)
            .map(|f| {
                let expected: f64 = (0..self.n_classes).map(|j| probs[j] * self.weight(j, f)).sum();
                pk * (self.weight(class, f) - expected)
            })
            .collect())
    }

    /// Gradient of `probs[class]` with respect to every pixel entry, `h x w x 3`.
    pub fn pixel_gradient(
        &self,
        height: usize,
        width: usize,
        pixels: &[f64],
        class: usize,
    ) -> Result<Vec<f64>, ModelError> {
        let grid = self.grid()?;
        let g_phi = self.feature_gradient(&self.pixel_features(height, width, pixels)?, class)?;
        let rows = block_starts(height, grid);
        let cols = block_starts(width, grid);
        let mut out = vec![0.0; height * width * CHANNELS];
        for by in 0..grid {
            for bx in 0..grid {
                let n = ((rows[by + 1] - rows[by]) * (cols[bx + 1] - cols[bx])) as f64;
                for y in rows[by]..rows[by + 1] {
                    for x in cols[bx]..cols[bx + 1] {
                        for c in 0..CHANNELS {
                            out[(y * width + x) * CHANNELS + c] = g_phi[(by * grid + bx) * CHANNELS + c] / n;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Channel-summed pixel gradient of `probs[class]`.
    pub fn explain_image(&self, img: &TensorImage, class: usize) -> Result<SaliencyMask, ModelError> {
        let (h, w) = (img.height(), img.width());
        let g = self.pixel_gradient(h, w, &img.to_f64(), class)?;
        let values = g.chunks_exact(CHANNELS).map(|px| px.iter().sum()).collect();
        Ok(SaliencyMask::new(h, w, values)?)
    }

    pub fn explain_row(&self, row: &[f64], class: usize) -> Result<ExplanationSummary, ModelError> {
        if self.extractor != FeatureExtractor::Identity {
            return Err(ModelError::WrongKind);
        }
        Ok(ExplanationSummary::new(METHOD_NAME, self.feature_gradient(row, class)?))
    }
}

/// Draws parameters from the canonical stream: all weights (row-major) first,
/// then biases, each `scale * N(0, 1)`. Each weight row is then shifted to sum
/// to zero, so a uniform grey input yields `logits = b`.
pub fn generate(
    seed: u64,
    n_classes: usize,
    n_features: usize,
    extractor: FeatureExtractor,
) -> Result<LinearSoftmaxModel, ModelError> {
    let mut rng = seeded_rng(seed);
    let mut weights: Vec<f64> = (0..n_classes * n_features).map(|_| WEIGHT_SCALE * standard_normal(&mut rng)).collect();
    for row in weights.chunks_exact_mut(n_features) {
        let mean = row.iter().sum::<f64>() / n_features as f64;
        row.iter_mut().for_each(|w| *w -= mean);
    }
    let bias = (0..n_classes).map(|_| BIAS_SCALE * standard_normal(&mut rng)).collect();
    LinearSoftmaxModel::new(n_classes, n_features, weights, bias, extractor)
}

pub fn vision_tabular_seeds() -> (u64, u64) {
    (GENERATOR_SEED, GENERATOR_SEED + 1)
}

pub fn descriptor_for(name: &str, model: &LinearSoftmaxModel, seed: u64) -> ModelDescriptor {
    ModelDescriptor {
        name: name.into(),
        n_classes: model.n_classes,
        n_features: model.n_features,
        extractor: model.extractor,
        layout: "f64 little-endian; weights row-major (class, feature), then bias".into(),
        generator: Generator {
            seed,
            weight_scale: WEIGHT_SCALE,
            bias_scale: BIAS_SCALE,
        },
        sha256: sha256_hex(&model.to_le_bytes()),
    }
}

fn load(blob: &[u8], descriptor: &str) -> Result<LinearSoftmaxModel, ModelError> {
    let d: ModelDescriptor = serde_json::from_str(descriptor).map_err(|e| ModelError::Asset(e.to_string()))?;
    if sha256_hex(blob) != d.sha256 {
        return Err(ModelError::Asset(format!("{} digest mismatch", d.name)));
    }
    if blob.len() != (d.n_classes * d.n_features + d.n_classes) * 8 {
        return Err(ModelError::Asset(format!("{} blob has {} bytes", d.name, blob.len())));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect();
    let (w, b) = values.split_at(d.n_classes * d.n_features);
    LinearSoftmaxModel::new(d.n_classes, d.n_features, w.to_vec(), b.to_vec(), d.extractor)
}

/// Frozen vision reference model.
pub fn vision() -> &'static LinearSoftmaxModel {
    static M: OnceLock<LinearSoftmaxModel> = OnceLock::new();
    M.get_or_init(|| load(VISION_BLOB, VISION_DESCRIPTOR).expect("bundled vision model asset"))
}

/// Frozen tabular reference model.
pub fn tabular() -> &'static LinearSoftmaxModel {
    static M: OnceLock<LinearSoftmaxModel> = OnceLock::new();
    M.get_or_init(|| load(TABULAR_BLOB, TABULAR_DESCRIPTOR).expect("bundled tabular model asset"))
}

pub fn vision_descriptor() -> ModelDescriptor {
    serde_json::from_str(VISION_DESCRIPTOR).expect("bundled descriptor")
}

pub fn tabular_descriptor() -> ModelDescriptor {
    serde_json::from_str(TABULAR_DESCRIPTOR).expect("bundled descriptor")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::uniform01;

    fn random_pixels(h: usize, w: usize, seed: u64) -> Vec<f64> {
        let mut rng = seeded_rng(seed);
        (0..h * w * CHANNELS).map(|_| uniform01(&mut rng)).collect()
    }

    #[test]
    fn bundled_assets_match_generator() {
        let (vs, ts) = vision_tabular_seeds();
        let v = generate(vs, VISION_CLASSES, VISION_FEATURES, FeatureExtractor::BlockMeans { grid: GRID }).unwrap();
        assert_eq!(v.to_le_bytes(), VISION_BLOB);
        assert_eq!(vision_descriptor(), descriptor_for("refmodel-vision", &v, vs));
        let t = generate(ts, TABULAR_CLASSES, TABULAR_FEATURES, FeatureExtractor::Identity).unwrap();
        assert_eq!(t.to_le_bytes(), TABULAR_BLOB);
        assert_eq!(tabular_descriptor(), descriptor_for("refmodel-tabular", &t, ts));
    }

    /// Rewrites the frozen assets. Run once with `--ignored` when the generator changes.
    #[test]
    #[ignore]
    fn write_assets() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("assets");
        std::fs::create_dir_all(&dir).unwrap();
        let (vs, ts) = vision_tabular_seeds();
        let v = generate(vs, VISION_CLASSES, VISION_FEATURES, FeatureExtractor::BlockMeans { grid: GRID }).unwrap();
        let t = generate(ts, TABULAR_CLASSES, TABULAR_FEATURES, FeatureExtractor::Identity).unwrap();
        for (name, m, seed, file) in [("refmodel-vision", &v, vs, "refmodel_vision"), ("refmodel-tabular", &t, ts, "refmodel_tabular")] {
            std::fs::write(dir.join(format!("{file}.bin")), m.to_le_bytes()).unwrap();
            let d = serde_json::to_string_pretty(&descriptor_for(name, m, seed)).unwrap();
            std::fs::write(dir.join(format!("{file}.json")), d + "\n").unwrap();
        }
    }

    #[test]
    fn zero_input_zero_bias_is_uniform() {
        let m = LinearSoftmaxModel::new(
            4,
            VISION_FEATURES,
            vision().weights().to_vec()[..4 * VISION_FEATURES].to_vec(),
            vec![0.0; 4],
            FeatureExtractor::BlockMeans { grid: GRID },
        )
        .unwrap();
        let p = m.predict_image(&TensorImage::filled(8, 8, 0.0)).unwrap();
        assert!(p.probs.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn predict_matches_matrix_oracle() {
        let m = vision();
        let px = random_pixels(8, 8, 3);
        // features straight from the definition: 2x2 blocks of an 8x8 image
        let mut phi = vec![0.0; VISION_FEATURES];
        for y in 0..8 {
            for x in 0..8 {
                for c in 0..3 {
                    phi[((y / 2) * 4 + x / 2) * 3 + c] += px[(y * 8 + x) * 3 + c] / 4.0;
                }
            }
        }
        let logits: Vec<f64> = (0..VISION_CLASSES)
            .map(|k| (0..VISION_FEATURES).fold(m.bias()[k], |acc, f| acc + m.weight(k, f) * phi[f]))
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let p = m.predict_pixels(8, 8, &px).unwrap();
        for (a, l) in p.probs.iter().zip(&logits) {
            assert!((a - l.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_equals_single_and_pure() {
        let t = tabular();
        let mut rng = seeded_rng(5);
        let data: Vec<f64> = (0..64 * TABULAR_FEATURES).map(|_| standard_normal(&mut rng)).collect();
        let cols = (0..TABULAR_FEATURES).map(|i| crate::types::Column::numeric(format!("f{i}"))).collect();
        let tab = TabularMatrix::new(cols, data).unwrap();
        let batch = t.predict_table(&tab).unwrap();
        for (r, p) in batch.iter().enumerate() {
            assert_eq!(p, &t.predict_row(tab.row(r)).unwrap());
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = vision();
        let eps = 1e-5;
        for s in 0..10 {
            let px = random_pixels(8, 8, 100 + s);
            let class = (s as usize) % VISION_CLASSES;
            let g = m.pixel_gradient(8, 8, &px, class).unwrap();
            let mut worst: f64 = 0.0;
            let mut x = px.clone();
            for i in 0..px.len() {
                x[i] = px[i] + eps;
                let up = m.predict_pixels(8, 8, &x).unwrap().probs[class];
                x[i] = px[i] - eps;
                let down = m.predict_pixels(8, 8, &x).unwrap().probs[class];
                x[i] = px[i];
                worst = worst.max((g[i] - (up - down) / (2.0 * eps)).abs());
            }
            let scale = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(worst / scale <= 1e-6, "{}", worst / scale);
        }
    }

    #[test]
    fn zero_weights_give_zero_mask() {
        // A single zero row still leaves -p_k * sum_j p_j W_j; only an all-zero W gives a zero mask.
        let zero = vec![0.0; VISION_CLASSES * VISION_FEATURES];
        let b = vec![0.0; VISION_CLASSES];
        let m = LinearSoftmaxModel::new(VISION_CLASSES, VISION_FEATURES, zero, b, vision().extractor()).unwrap();
        let mask = m.explain_image(&TensorImage::filled(8, 8, 0.3), 0).unwrap();
        assert!(mask.values.iter().all(|&x| x == 0.0));

        let mut w = vision().weights().to_vec();
        w[..VISION_FEATURES].iter_mut().for_each(|x| *x = 0.0);
        let m = LinearSoftmaxModel::new(VISION_CLASSES, VISION_FEATURES, w, vec![0.0; VISION_CLASSES], vision().extractor())
            .unwrap();
        let mask = m.explain_image(&TensorImage::filled(8, 8, 0.3), 0).unwrap();
        assert!(mask.values.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn tabular_explanation_shape_and_errors() {
        let t = tabular();
        let e = t.explain_row(&[0.0; TABULAR_FEATURES], 1).unwrap();
        assert_eq!(e.importances.len(), TABULAR_FEATURES);
        assert!(matches!(t.explain_row(&[0.0; TABULAR_FEATURES], 3), Err(ModelError::InvalidClass { .. })));
        assert!(matches!(t.predict_row(&[0.0; 2]), Err(ModelError::FeatureLength { .. })));
        assert_eq!(vision().predict_row(&[0.0; VISION_FEATURES]), Err(ModelError::WrongKind));
    }
}
