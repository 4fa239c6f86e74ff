//! Corruption kernels applied by the data-processing service.
//!
//! Image kernels: additive Gaussian noise, defocus (disk) blur and pixelation.
//! Tabular kernel: per-column Gaussian noise scaled by the column's standard
//! deviation. Severity parameters live in [`SeverityTable`].

use rand_core::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::canonical::{derived_id, to_canonical};
use crate::dataset::{Dataset, DatasetData, DatasetError, DatasetKind};
use crate::rng::{derive_seed, seeded_rng, standard_normal};
use crate::types::{PerturbationKind, PerturbationSpec, TabularMatrix, TensorImage, TypeError, CHANNELS};

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("severity {0} outside 1..=3")]
    Severity(u8),
    #[error("image {height}x{width} is smaller than the {size}x{size} kernel")]
    ImageTooSmall {
        height: usize,
        width: usize,
        size: usize,
    },
    #[error("pixelate fraction {fraction} collapses {height}x{width} to zero size")]
    ZeroSize {
        fraction: f64,
        height: usize,
        width: usize,
    },
    #[error("table has no numeric column")]
    NoNumericColumn,
    #[error("{kind} cannot be applied to a {dataset:?} dataset")]
    KindMismatch {
        kind: PerturbationKind,
        dataset: DatasetKind,
    },
    #[error(transparent)]
    Spec(#[from] TypeError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Per-severity parameters, index 0 = severity 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityTable {
    pub noise_sigma: [f64; 3],
    pub blur_radius: [usize; 3],
    pub pixelate_fraction: [f64; 3],
    pub tabular_scale: [f64; 3],
}

impl Default for SeverityTable {
    fn default() -> Self {
        Self {
            noise_sigma: [0.08, 0.12, 0.18],
            blur_radius: [3, 5, 7],
            pixelate_fraction: [0.6, 0.5, 0.4],
            tabular_scale: [0.05, 0.10, 0.20],
        }
    }
}

impl SeverityTable {
    fn slot(severity: u8) -> Result<usize, PerturbError> {
        match severity {
            1..=3 => Ok(usize::from(severity) - 1),
            s => Err(PerturbError::Severity(s)),
        }
    }

    pub fn sigma(&self, severity: u8) -> Result<f64, PerturbError> {
        Ok(self.noise_sigma[Self::slot(severity)?])
    }

    pub fn radius(&self, severity: u8) -> Result<usize, PerturbError> {
        Ok(self.blur_radius[Self::slot(severity)?])
    }

    pub fn fraction(&self, severity: u8) -> Result<f64, PerturbError> {
        Ok(self.pixelate_fraction[Self::slot(severity)?])
    }

    pub fn scale(&self, severity: u8) -> Result<f64, PerturbError> {
        Ok(self.tabular_scale[Self::slot(severity)?])
    }

    /// True when every parameter moves strictly toward "more severe".
    pub fn is_monotone(&self) -> bool {
        let up = |a: &[f64; 3]| a[0] < a[1] && a[1] < a[2];
        up(&self.noise_sigma)
            && self.blur_radius[0] < self.blur_radius[1]
            && self.blur_radius[1] < self.blur_radius[2]
            && self.pixelate_fraction[0] > self.pixelate_fraction[1]
            && self.pixelate_fraction[1] > self.pixelate_fraction[2]
            && up(&self.tabular_scale)
    }
}

pub fn gaussian_noise<R: Rng + ?Sized>(
    img: &TensorImage,
    severity: u8,
    table: &SeverityTable,
    rng: &mut R,
) -> Result<TensorImage, PerturbError> {
    Ok(gaussian_noise_sigma(img, table.sigma(severity)?, rng))
}

/// `clamp(x + sigma * z)` for every channel value, drawn row-major.
pub fn gaussian_noise_sigma<R: Rng + ?Sized>(img: &TensorImage, sigma: f64, rng: &mut R) -> TensorImage {
    let data = img
        .data()
        .iter()
        .map(|&v| (f64::from(v) + sigma * standard_normal(rng)).clamp(0.0, 1.0) as f32)
        .collect();
    TensorImage::new(img.height(), img.width(), data).expect("shape preserved")
}

/// Offsets of the normalised disk kernel of the given radius.
pub fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dy, dx));
            }
        }
    }
    out
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

pub fn defocus_blur(img: &TensorImage, severity: u8, table: &SeverityTable) -> Result<TensorImage, PerturbError> {
    defocus_blur_radius(img, table.radius(severity)?)
}

pub fn defocus_blur_radius(img: &TensorImage, radius: usize) -> Result<TensorImage, PerturbError> {
    let size = 2 * radius + 1;
    let (h, w) = (img.height(), img.width());
    if h < size || w < size {
        return Err(PerturbError::ImageTooSmall {
            height: h,
            width: w,
            size,
        });
    }
    let offsets = disk_offsets(radius);
    let weight = 1.0 / offsets.len() as f64;
    let mut data = Vec::with_capacity(img.data().len());
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                let mut acc = 0.0;
                for &(dy, dx) in &offsets {
                    let sy = reflect(y as isize + dy, h);
                    let sx = reflect(x as isize + dx, w);
                    acc += f64::from(img.get(sy, sx, c));
                }
                data.push((acc * weight).clamp(0.0, 1.0) as f32);
            }
        }
    }
    Ok(TensorImage::new(h, w, data)?)
}

/// Start offsets of `cells` blocks partitioning `n` samples: `ceil(i * n / cells)`.
///
/// With this partition a nearest-neighbour upscale (`y -> floor(y * cells / n)`)
/// maps every sample back to the block it was averaged in.
pub fn block_starts(n: usize, cells: usize) -> Vec<usize> {
    (0..=cells).map(|i| (i * n).div_ceil(cells)).collect()
}

pub fn pixelate(img: &TensorImage, severity: u8, table: &SeverityTable) -> Result<TensorImage, PerturbError> {
    pixelate_fraction(img, table.fraction(severity)?)
}

/// Box-average downscale by `fraction` followed by nearest-neighbour upscale.
pub fn pixelate_fraction(img: &TensorImage, fraction: f64) -> Result<TensorImage, PerturbError> {
    let (h, w) = (img.height(), img.width());
    let hs = (h as f64 * fraction).floor() as usize;
    let ws = (w as f64 * fraction).floor() as usize;
    if hs == 0 || ws == 0 {
        return Err(PerturbError::ZeroSize {
            fraction,
            height: h,
            width: w,
        });
    }
    let (hs, ws) = (hs.min(h), ws.min(w));
    let rows = block_starts(h, hs);
    let cols = block_starts(w, ws);
    let mut out = vec![0f32; img.data().len()];
    for by in 0..hs {
        for bx in 0..ws {
            let (y0, y1, x0, x1) = (rows[by], rows[by + 1], cols[bx], cols[bx + 1]);
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            for c in 0..CHANNELS {
                let mut acc = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        acc += f64::from(img.get(y, x, c));
                    }
                }
                let mean = (acc / n) as f32;
                for y in y0..y1 {
                    for x in x0..x1 {
                        out[img.index(y, x, c)] = mean;
                    }
                }
            }
        }
    }
    Ok(TensorImage::new(h, w, out)?)
}

pub fn tabular_noise<R: Rng + ?Sized>(
    tab: &TabularMatrix,
    severity: u8,
    table: &SeverityTable,
    rng: &mut R,
) -> Result<TabularMatrix, PerturbError> {
    tabular_noise_scale(tab, table.scale(severity)?, rng)
}

/// Population standard deviation of each numeric column (`None` for categorical).
pub fn column_stds(tab: &TabularMatrix) -> Vec<Option<f64>> {
    let n = tab.rows() as f64;
    tab.columns()
        .iter()
        .enumerate()
        .map(|(c, col)| {
            if !col.is_numeric() || tab.rows() == 0 {
                return None;
            }
            let mean = (0..tab.rows()).map(|r| tab.get(r, c)).sum::<f64>() / n;
            let var = (0..tab.rows()).map(|r| (tab.get(r, c) - mean).powi(2)).sum::<f64>() / n;
            Some(var.sqrt())
        })
        .collect()
}

/// `x + N(0, (scale * std_col)^2)` on numeric cells, drawn row-major over the
/// numeric columns with non-zero spread. Categorical and constant columns
/// are left untouched.
pub fn tabular_noise_scale<R: Rng + ?Sized>(
    tab: &TabularMatrix,
    scale: f64,
    rng: &mut R,
) -> Result<TabularMatrix, PerturbError> {
    if !tab.columns().iter().any(|c| c.is_numeric()) {
        return Err(PerturbError::NoNumericColumn);
    }
    let stds = column_stds(tab);
    for (col, std) in tab.columns().iter().zip(&stds) {
        if *std == Some(0.0) {
            warn!(column = %col.name, "zero-variance column left unperturbed");
        }
    }
    let mut data = tab.data().to_vec();
    let n = tab.n_columns();
    for r in 0..tab.rows() {
        for (c, std) in stds.iter().enumerate() {
            if let Some(std) = *std {
                if std > 0.0 {
                    data[r * n + c] += scale * std * standard_normal(rng);
                }
            }
        }
    }
    Ok(tab.with_data(data)?)
}

/// Applies `spec` to every item of `dataset`.
///
/// Item `i` uses the generator seeded with `derive_seed(spec.seed, i)`; a
/// table counts as a single item. The result id is derived from the source id
/// and the canonical spec.
pub fn apply(spec: &PerturbationSpec, dataset: &Dataset, table: &SeverityTable) -> Result<Dataset, PerturbError> {
    spec.validate()?;
    let kind = dataset.kind();
    let compatible = match spec.kind {
        PerturbationKind::Identity => true,
        PerturbationKind::TabularNoise => kind == DatasetKind::Tabular,
        _ => kind == DatasetKind::Image,
    };
    if !compatible {
        return Err(PerturbError::KindMismatch {
            kind: spec.kind,
            dataset: kind,
        });
    }
    let id = derived_id(spec.kind.as_str(), &dataset.id, &to_canonical(spec));
    let seed = spec.seed.unwrap_or(0);
    let data = match &dataset.data {
        DatasetData::Images(images) => DatasetData::Images(
            images
                .iter()
                .enumerate()
                .map(|(i, img)| {
                    let mut rng = seeded_rng(derive_seed(seed, i as u64));
                    match spec.kind {
                        PerturbationKind::Identity => Ok(img.clone()),
                        PerturbationKind::GaussianNoise => gaussian_noise(img, spec.severity, table, &mut rng),
                        PerturbationKind::DefocusBlur => defocus_blur(img, spec.severity, table),
                        PerturbationKind::Pixelate => pixelate(img, spec.severity, table),
                        PerturbationKind::TabularNoise => unreachable!("checked above"),
                    }
                })
                .collect::<Result<Vec<_>, _>>()?,
        ),
        DatasetData::Tabular(t) => {
            let mut rng = seeded_rng(derive_seed(seed, 0));
            DatasetData::Tabular(match spec.kind {
                PerturbationKind::Identity => t.clone(),
                _ => tabular_noise(t, spec.severity, table, &mut rng)?,
            })
        }
    };
    Ok(Dataset {
        id,
        data,
        labels: dataset.labels.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::uniform01;
    use crate::types::Column;

    fn mean_abs_diff(a: &TensorImage, b: &TensorImage) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (f64::from(*x) - f64::from(*y)).abs())
            .sum::<f64>()
            / a.data().len() as f64
    }

    fn variance(img: &TensorImage) -> f64 {
        let v = img.to_f64();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
    }

    fn textured(h: usize, w: usize, seed: u64) -> TensorImage {
        let mut rng = seeded_rng(seed);
        TensorImage::from_fn(h, w, |_, _, _| (0.2 + 0.6 * uniform01(&mut rng)) as f32)
    }

    #[test]
    fn default_table_is_monotone() {
        assert!(SeverityTable::default().is_monotone());
        assert!(matches!(SeverityTable::default().sigma(4), Err(PerturbError::Severity(4))));
        assert!(matches!(SeverityTable::default().radius(0), Err(PerturbError::Severity(0))));
    }

    #[test]
    fn zero_sigma_is_identity() {
        let img = textured(5, 4, 1);
        assert_eq!(gaussian_noise_sigma(&img, 0.0, &mut seeded_rng(3)), img);
    }

    #[test]
    fn noise_grows_with_severity() {
        let img = textured(16, 16, 2);
        let t = SeverityTable::default();
        let d1 = mean_abs_diff(&img, &gaussian_noise(&img, 1, &t, &mut seeded_rng(11)).unwrap());
        let d3 = mean_abs_diff(&img, &gaussian_noise(&img, 3, &t, &mut seeded_rng(11)).unwrap());
        assert!(d3 > d1, "{d1} {d3}");
    }

    #[test]
    fn noise_golden_on_zero_image() {
        let img = TensorImage::filled(2, 2, 0.0);
        let out = gaussian_noise(&img, 2, &SeverityTable::default(), &mut seeded_rng(7)).unwrap();
        // Recompute with the canonical stream: clamp(0.12 * z) per value.
        let mut rng = seeded_rng(7);
        let expected: Vec<f32> = (0..12)
            .map(|_| (0.12 * standard_normal(&mut rng)).clamp(0.0, 1.0) as f32)
            .collect();
        assert_eq!(out.data(), &expected[..]);
        assert_eq!(out.data(), &GOLDEN_NOISE_SEED7_SEV2[..]);
    }

    // Cross-checked against an independent big-integer reimplementation.
    const GOLDEN_NOISE_SEED7_SEV2: [f32; 12] = [
        0.090532966, 0.0, 0.0, 0.24960245, 0.10836153, 0.0, 0.03048899, 0.15124856, 0.113721095, 0.0, 0.2582843, 0.09328324,
    ];

    #[test]
    fn blur_constant_image_unchanged() {
        let img = TensorImage::filled(16, 16, 0.42);
        let out = defocus_blur(&img, 2, &SeverityTable::default()).unwrap();
        for v in out.data() {
            assert!((v - 0.42).abs() < 1e-6);
        }
    }

    #[test]
    fn blur_spreads_bright_pixel_over_disk() {
        let mut data = vec![0f32; 21 * 21 * 3];
        let centre = (10 * 21 + 10) * 3;
        data[centre] = 1.0;
        let img = TensorImage::new(21, 21, data).unwrap();
        let out = defocus_blur_radius(&img, 3).unwrap();
        let offsets = disk_offsets(3);
        // direct convolution oracle for the red channel
        let mut expected = vec![0f64; 21 * 21];
        for &(dy, dx) in &offsets {
            expected[((10 + dy) * 21 + (10 + dx)) as usize] = 1.0 / offsets.len() as f64;
        }
        let mut total = 0.0;
        for y in 0..21 {
            for x in 0..21 {
                let v = f64::from(out.get(y, x, 0));
                assert!((v - expected[y * 21 + x]).abs() < 1e-7);
                total += v;
            }
        }
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn blur_variance_drops_with_severity_on_checkerboard() {
        let img = TensorImage::from_fn(32, 32, |y, x, _| if (y / 4 + x / 4) % 2 == 0 { 1.0 } else { 0.0 });
        let t = SeverityTable::default();
        let v: Vec<f64> = (1..=3).map(|s| variance(&defocus_blur(&img, s, &t).unwrap())).collect();
        assert!(variance(&img) > v[0] && v[0] > v[1] && v[1] > v[2], "{v:?}");
    }

    #[test]
    fn blur_rejects_small_image() {
        let img = TensorImage::filled(6, 20, 0.5);
        assert!(matches!(
            defocus_blur_radius(&img, 3),
            Err(PerturbError::ImageTooSmall { size: 7, .. })
        ));
    }

    #[test]
    fn reflect_indexing() {
        let got: Vec<usize> = (-3..8).map(|i| reflect(i, 5)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
    }

    #[test]
    fn pixelate_full_fraction_is_identity() {
        let img = textured(7, 5, 3);
        assert_eq!(pixelate_fraction(&img, 1.0).unwrap(), img);
    }

    #[test]
    fn pixelate_half_on_4x4_gives_block_means() {
        let img = TensorImage::from_fn(4, 4, |y, x, c| ((y * 4 + x) as f32 + c as f32) / 32.0);
        let out = pixelate_fraction(&img, 0.5).unwrap();
        for by in 0..2 {
            for bx in 0..2 {
                for c in 0..3 {
                    let mut s = 0.0f64;
                    for y in 2 * by..2 * by + 2 {
                        for x in 2 * bx..2 * bx + 2 {
                            s += f64::from(img.get(y, x, c));
                        }
                    }
                    let mean = (s / 4.0) as f32;
                    for y in 2 * by..2 * by + 2 {
                        for x in 2 * bx..2 * bx + 2 {
                            assert_eq!(out.get(y, x, c), mean);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn pixelate_is_idempotent() {
        let t = SeverityTable::default();
        for (h, w) in [(32, 32), (30, 17), (9, 13)] {
            let img = textured(h, w, 4);
            for s in 1..=3 {
                let once = pixelate(&img, s, &t).unwrap();
                assert_eq!(pixelate(&once, s, &t).unwrap(), once, "{h}x{w} severity {s}");
            }
        }
    }

    #[test]
    fn pixelate_rejects_zero_size() {
        let img = textured(2, 2, 4);
        assert!(matches!(pixelate_fraction(&img, 0.4), Err(PerturbError::ZeroSize { .. })));
    }

    #[test]
    fn nearest_upscale_matches_block_partition() {
        for (n, cells) in [(32, 19), (32, 12), (30, 15), (7, 3)] {
            let starts = block_starts(n, cells);
            for y in 0..n {
                let cell = y * cells / n;
                assert!(starts[cell] <= y && y < starts[cell + 1]);
            }
        }
    }

    fn table(cols: Vec<Column>, data: Vec<f64>) -> TabularMatrix {
        TabularMatrix::new(cols, data).unwrap()
    }

    #[test]
    fn tabular_zero_scale_is_identity() {
        let t = table(vec![Column::numeric("a")], vec![1.0, 2.0, 4.0]);
        assert_eq!(tabular_noise_scale(&t, 0.0, &mut seeded_rng(1)).unwrap(), t);
    }

    #[test]
    fn tabular_constant_column_unchanged() {
        let t = table(vec![Column::numeric("a")], vec![0.0; 4]);
        assert_eq!(tabular_noise_scale(&t, 0.2, &mut seeded_rng(1)).unwrap(), t);
    }

    #[test]
    fn tabular_all_categorical_rejected() {
        let t = table(vec![Column::categorical("c", &["x", "y"])], vec![0.0, 1.0]);
        assert!(matches!(
            tabular_noise_scale(&t, 0.1, &mut seeded_rng(1)),
            Err(PerturbError::NoNumericColumn)
        ));
    }

    #[test]
    fn tabular_noise_matches_stream_oracle() {
        // population std of [0, 4, 0, 4] is 2
        let t = table(
            vec![Column::numeric("v"), Column::categorical("c", &["a", "b"])],
            vec![0.0, 0.0, 4.0, 1.0, 0.0, 1.0, 4.0, 0.0],
        );
        assert_eq!(column_stds(&t)[0], Some(2.0));
        let out = tabular_noise(&t, 2, &SeverityTable::default(), &mut seeded_rng(3)).unwrap();
        let mut rng = seeded_rng(3);
        for r in 0..4 {
            let z = standard_normal(&mut rng);
            assert_eq!(out.get(r, 0), t.get(r, 0) + 0.1 * 2.0 * z);
            assert_eq!(out.get(r, 1), t.get(r, 1));
        }
    }

    fn synthetic(n: usize) -> Dataset {
        let imgs = (0..n).map(|i| textured(16, 16, 100 + i as u64)).collect();
        Dataset::images("synth", imgs, None).unwrap()
    }

    #[test]
    fn identity_preserves_digest() {
        let ds = synthetic(4);
        let out = apply(&PerturbationSpec::identity(), &ds, &SeverityTable::default()).unwrap();
        assert_eq!(out.content_digest().unwrap(), ds.content_digest().unwrap());
        assert_ne!(out.id, ds.id);
    }

    #[test]
    fn apply_is_deterministic_and_in_range() {
        let ds = synthetic(64);
        let spec = PerturbationSpec::new(PerturbationKind::GaussianNoise, 1, Some(9)).unwrap();
        let t = SeverityTable::default();
        let a = apply(&spec, &ds, &t).unwrap();
        let b = apply(&spec, &ds, &t).unwrap();
        assert_eq!(a.id, b.id);
        assert_eq!(a.content_digest().unwrap(), b.content_digest().unwrap());
        let imgs = a.as_images().unwrap();
        assert_eq!(imgs.len(), 64);
        assert!(imgs.iter().all(|i| i.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn apply_item_seeds_are_order_independent() {
        let ds = synthetic(3);
        let spec = PerturbationSpec::new(PerturbationKind::GaussianNoise, 2, Some(5)).unwrap();
        let t = SeverityTable::default();
        let all = apply(&spec, &ds, &t).unwrap();
        let direct = gaussian_noise(&ds.as_images().unwrap()[2], 2, &t, &mut seeded_rng(derive_seed(5, 2))).unwrap();
        assert_eq!(all.as_images().unwrap()[2], direct);
    }

    #[test]
    fn apply_rejects_kind_mismatch() {
        let ds = synthetic(1);
        let spec = PerturbationSpec::new(PerturbationKind::TabularNoise, 1, Some(1)).unwrap();
        assert!(matches!(
            apply(&spec, &ds, &SeverityTable::default()),
            Err(PerturbError::KindMismatch { .. })
        ));
    }
}
