//! Deterministic synthetic benchmarks with labels known by construction.
//!
//! Image of class `k`: every 4×4 block `j`, channel `c` gets the base level
//! `0.5 + AMPLITUDE * d_k[j,c]`, where `d_k` is the reference model's weight
//! row `k` minus the class-mean row, scaled to `[-1, 1]`. Each sample adds a
//! per-block jitter `JITTER * z` and per-pixel texture `TEXTURE * z`, all values
//! clamped to `[0, 1]`. Sample `i` has class `i % 10` and draws from
//! `derive_seed(seed, i)`.
//!
//! The side length 36 keeps the pixelate cell grids of all three default
//! severities off the model's block boundaries, so coarser pixelation always
//! mixes more neighbouring blocks. Sizes such as 32 or 30 align one severity
//! with the blocks and make it a no-op for the model.

use crate::canonical::derived_id;
use crate::dataset::Dataset;
use crate::perturb::block_starts;
use crate::refmodel::{self, GRID, TABULAR_CLASSES, TABULAR_FEATURES, VISION_CLASSES};
use crate::rng::{derive_seed, seeded_rng, standard_normal, uniform01};
use crate::types::{Column, TabularMatrix, TensorImage, CHANNELS};

pub const IMAGE_SIZE: usize = 36;
pub const AMPLITUDE: f64 = 0.08;
pub const JITTER: f64 = 0.05;
pub const TEXTURE: f64 = 0.2;
pub const TABULAR_SPREAD: f64 = 1.0;
pub const CATEGORY_VOCABULARY: [&str; 3] = ["low", "mid", "high"];

/// Per-class direction in feature space, scaled so the largest entry is ±1.
fn class_directions(model: &refmodel::LinearSoftmaxModel) -> Vec<Vec<f64>> {
    let (k, f) = (model.n_classes(), model.n_features());
    let mean: Vec<f64> = (0..f).map(|j| (0..k).map(|c| model.weight(c, j)).sum::<f64>() / k as f64).collect();
    (0..k)
        .map(|c| {
            let d: Vec<f64> = (0..f).map(|j| model.weight(c, j) - mean[j]).collect();
            let m = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            d.into_iter().map(|v| v / m).collect()
        })
        .collect()
}

pub fn synthetic_image(class: usize, size: usize, seed: u64) -> TensorImage {
    let dirs = class_directions(refmodel::vision());
    let d = &dirs[class % VISION_CLASSES];
    let mut rng = seeded_rng(seed);
    let jitter: Vec<f64> = (0..d.len()).map(|_| JITTER * standard_normal(&mut rng)).collect();
    let starts = block_starts(size, GRID);
    let block = |p: usize| starts.partition_point(|&s| s <= p) - 1;
    let mut data = Vec::with_capacity(size * size * CHANNELS);
    for y in 0..size {
        for x in 0..size {
            for c in 0..CHANNELS {
                let j = (block(y) * GRID + block(x)) * CHANNELS + c;
                let v = 0.5 + AMPLITUDE * d[j] + jitter[j] + TEXTURE * standard_normal(&mut rng);
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    TensorImage::new(size, size, data).expect("values clamped")
}

/// `n` labelled images of side [`IMAGE_SIZE`].
pub fn image_dataset(n: usize, seed: u64) -> Dataset {
    image_dataset_sized(n, IMAGE_SIZE, seed)
}

pub fn image_dataset_sized(n: usize, size: usize, seed: u64) -> Dataset {
    let images = (0..n)
        .map(|i| synthetic_image(i % VISION_CLASSES, size, derive_seed(seed, i as u64)))
        .collect();
    let labels = (0..n).map(|i| i % VISION_CLASSES).collect();
    let id = derived_id("synth-img", &format!("{n}x{size}"), &seed.to_le_bytes());
    Dataset::images(id, images, Some(labels)).expect("uniform shapes")
}

/// `n` labelled rows: five numeric columns around the class direction plus a
/// categorical column whose code is drawn uniformly.
pub fn tabular_dataset(n: usize, seed: u64) -> Dataset {
    let dirs = class_directions(refmodel::tabular());
    let mut columns: Vec<Column> = (0..TABULAR_FEATURES - 1).map(|i| Column::numeric(format!("x{i}"))).collect();
    columns.push(Column::categorical("level", &CATEGORY_VOCABULARY));
    let mut data = Vec::with_capacity(n * TABULAR_FEATURES);
    for i in 0..n {
        let class = i % TABULAR_CLASSES;
        let mut rng = seeded_rng(derive_seed(seed, i as u64));
        for d in dirs[class].iter().take(TABULAR_FEATURES - 1) {
            data.push(d + TABULAR_SPREAD * standard_normal(&mut rng));
        }
        data.push((uniform01(&mut rng) * CATEGORY_VOCABULARY.len() as f64).floor());
    }
    let labels = (0..n).map(|i| i % TABULAR_CLASSES).collect();
    let id = derived_id("synth-tab", &n.to_string(), &seed.to_le_bytes());
    Dataset::tabular(id, TabularMatrix::new(columns, data).expect("rectangular"), Some(labels)).expect("labels")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_labelled() {
        let a = image_dataset(12, 3);
        let b = image_dataset(12, 3);
        assert_eq!(a, b);
        assert_eq!(a.labels.as_ref().unwrap()[11], 1);
        assert_ne!(a.content_digest().unwrap(), image_dataset(12, 4).content_digest().unwrap());
        let t = tabular_dataset(9, 1);
        assert_eq!(t, tabular_dataset(9, 1));
        assert_eq!(t.shape(), vec![9, TABULAR_FEATURES]);
    }
}
