//! Datasets and their on-disk form.
//!
//! A dataset directory holds `manifest.json` plus the item files it lists.
//! Images are raw little-endian float32 blobs (`item_00000.f32`, ...);
//! tabular data is one RFC-4180 `data.csv` with a `schema.json` sidecar.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{digest, sha256_hex};
use crate::types::{Column, ColumnKind, TabularMatrix, TensorImage, TypeError, CHANNELS};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCHEMA_FILE: &str = "schema.json";
pub const CSV_FILE: &str = "data.csv";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("item {index} has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        index: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{0} labels for {1} items")]
    LabelCount(usize, usize),
    #[error("digest mismatch for `{file}`")]
    Digest { file: String },
    #[error("malformed dataset: {0}")]
    Malformed(String),
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Image,
    Tabular,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetData {
    Images(Vec<TensorImage>),
    Tabular(TabularMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub id: String,
    pub data: DatasetData,
    pub labels: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub id: String,
    pub kind: DatasetKind,
    pub count: usize,
    pub shape: Vec<usize>,
    pub items: Vec<ManifestItem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
}

impl DatasetManifest {
    /// Content digest: independent of the dataset id and of file locations.
    pub fn content_digest(&self) -> String {
        let items: Vec<&str> = self.items.iter().map(|i| i.sha256.as_str()).collect();
        digest(&serde_json::json!({
            "kind": self.kind,
            "shape": self.shape,
            "items": items,
            "labels": self.labels,
        }))
    }
}

impl Dataset {
    pub fn images(
        id: impl Into<String>,
        images: Vec<TensorImage>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self, DatasetError> {
        if let Some(first) = images.first() {
            let expected = image_shape(first);
            for (index, img) in images.iter().enumerate() {
                let got = image_shape(img);
                if got != expected {
                    return Err(DatasetError::ShapeMismatch {
                        index,
                        expected,
                        got,
                    });
                }
            }
        }
        let ds = Self {
            id: id.into(),
            data: DatasetData::Images(images),
            labels,
        };
        ds.check_labels()?;
        Ok(ds)
    }

    pub fn tabular(
        id: impl Into<String>,
        matrix: TabularMatrix,
        labels: Option<Vec<usize>>,
    ) -> Result<Self, DatasetError> {
        let ds = Self {
            id: id.into(),
            data: DatasetData::Tabular(matrix),
            labels,
        };
        ds.check_labels()?;
        Ok(ds)
    }

    fn check_labels(&self) -> Result<(), DatasetError> {
        match &self.labels {
            Some(l) if l.len() != self.len() => Err(DatasetError::LabelCount(l.len(), self.len())),
            _ => Ok(()),
        }
    }

    pub fn kind(&self) -> DatasetKind {
        match self.data {
            DatasetData::Images(_) => DatasetKind::Image,
            DatasetData::Tabular(_) => DatasetKind::Tabular,
        }
    }

    /// Number of samples (images or table rows).
    pub fn len(&self) -> usize {
        match &self.data {
            DatasetData::Images(v) => v.len(),
            DatasetData::Tabular(t) => t.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> Vec<usize> {
        match &self.data {
            DatasetData::Images(v) => v.first().map(image_shape).unwrap_or_default(),
            DatasetData::Tabular(t) => vec![t.rows(), t.n_columns()],
        }
    }

    pub fn as_images(&self) -> Option<&[TensorImage]> {
        match &self.data {
            DatasetData::Images(v) => Some(v),
            DatasetData::Tabular(_) => None,
        }
    }

    pub fn as_tabular(&self) -> Option<&TabularMatrix> {
        match &self.data {
            DatasetData::Tabular(t) => Some(t),
            DatasetData::Images(_) => None,
        }
    }

    /// Files making up the dataset, in manifest order, excluding the manifest.
    pub fn encode_files(&self) -> Result<Vec<(String, Vec<u8>)>, DatasetError> {
        match &self.data {
            DatasetData::Images(images) => Ok(images
                .iter()
                .enumerate()
                .map(|(i, img)| (format!("item_{i:05}.f32"), img.to_le_bytes()))
                .collect()),
            DatasetData::Tabular(t) => Ok(vec![(CSV_FILE.to_string(), encode_csv(t)?)]),
        }
    }

    fn manifest_for(&self, files: &[(String, Vec<u8>)]) -> Result<DatasetManifest, DatasetError> {
        let (items, schema) = match &self.data {
            DatasetData::Images(_) => (
                files
                    .iter()
                    .map(|(file, bytes)| ManifestItem {
                        file: file.clone(),
                        sha256: sha256_hex(bytes),
                    })
                    .collect(),
                None,
            ),
            DatasetData::Tabular(t) => {
                let schema_bytes = serde_json::to_vec(t.columns())?;
                let mut items: Vec<ManifestItem> = files
                    .iter()
                    .map(|(file, bytes)| ManifestItem {
                        file: file.clone(),
                        sha256: sha256_hex(bytes),
                    })
                    .collect();
                items.push(ManifestItem {
                    file: SCHEMA_FILE.into(),
                    sha256: sha256_hex(&schema_bytes),
                });
                (items, Some(SCHEMA_FILE.to_string()))
            }
        };
        Ok(DatasetManifest {
            id: self.id.clone(),
            kind: self.kind(),
            count: self.len(),
            shape: self.shape(),
            items,
            schema,
            labels: self.labels.clone(),
        })
    }

    pub fn manifest(&self) -> Result<DatasetManifest, DatasetError> {
        let files = self.encode_files()?;
        self.manifest_for(&files)
    }

    pub fn content_digest(&self) -> Result<String, DatasetError> {
        Ok(self.manifest()?.content_digest())
    }
}

fn image_shape(img: &TensorImage) -> Vec<usize> {
    vec![img.height(), img.width(), CHANNELS]
}

fn encode_csv(t: &TabularMatrix) -> Result<Vec<u8>, DatasetError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    w.write_record(t.columns().iter().map(|c| c.name.as_str()))?;
    for r in 0..t.rows() {
        let record: Vec<String> = t
            .columns()
            .iter()
            .enumerate()
            .map(|(c, col)| match &col.kind {
                ColumnKind::Numeric => format!("{}", t.get(r, c)),
                ColumnKind::Categorical { vocabulary } => vocabulary[t.get(r, c) as usize].clone(),
            })
            .collect();
        w.write_record(&record)?;
    }
    w.into_inner().map_err(|e| DatasetError::Io(e.into_error()))
}

fn decode_csv(bytes: &[u8], columns: Vec<Column>) -> Result<TabularMatrix, DatasetError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = r.headers()?.clone();
    if header.len() != columns.len() || header.iter().zip(&columns).any(|(h, c)| h != c.name) {
        return Err(DatasetError::Malformed("csv header does not match schema".into()));
    }
    let mut data = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        for (cell, col) in rec.iter().zip(&columns) {
            let v = match &col.kind {
                ColumnKind::Numeric => cell
                    .parse::<f64>()
                    .map_err(|_| DatasetError::Malformed(format!("bad number `{cell}`")))?,
                ColumnKind::Categorical { vocabulary } => vocabulary
                    .iter()
                    .position(|v| v == cell)
                    .ok_or_else(|| {
                        DatasetError::Malformed(format!("`{cell}` not in vocabulary of `{}`", col.name))
                    })? as f64,
            };
            data.push(v);
        }
    }
    Ok(TabularMatrix::new(columns, data)?)
}

/// Writes the dataset into `dir` (created if needed) and returns its manifest.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<DatasetManifest, DatasetError> {
    fs::create_dir_all(dir)?;
    let files = dataset.encode_files()?;
    let manifest = dataset.manifest_for(&files)?;
    for (name, bytes) in &files {
        fs::write(dir.join(name), bytes)?;
    }
    if let DatasetData::Tabular(t) = &dataset.data {
        fs::write(dir.join(SCHEMA_FILE), serde_json::to_vec(t.columns())?)?;
    }
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest, DatasetError> {
    Ok(serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?)
}

/// Reads a dataset back, verifying every file digest against the manifest.
pub fn read_dataset(dir: &Path) -> Result<Dataset, DatasetError> {
    let manifest = read_manifest(dir)?;
    let mut blobs = Vec::with_capacity(manifest.items.len());
    for item in &manifest.items {
        let bytes = fs::read(dir.join(&item.file))?;
        if sha256_hex(&bytes) != item.sha256 {
            return Err(DatasetError::Digest {
                file: item.file.clone(),
            });
        }
        blobs.push((item.file.as_str(), bytes));
    }
    match manifest.kind {
        DatasetKind::Image => {
            let images = if manifest.count == 0 {
                Vec::new()
            } else {
                let [h, w, c] = manifest.shape[..] else {
                    return Err(DatasetError::Malformed(format!("image shape {:?}", manifest.shape)));
                };
                if c != CHANNELS {
                    return Err(DatasetError::Malformed(format!("{c} channels")));
                }
                blobs
                    .iter()
                    .map(|(_, b)| TensorImage::from_le_bytes(h, w, b))
                    .collect::<Result<Vec<_>, _>>()?
            };
            if images.len() != manifest.count {
                return Err(DatasetError::Malformed("count does not match items".into()));
            }
            Dataset::images(manifest.id, images, manifest.labels)
        }
        DatasetKind::Tabular => {
            let schema = blobs
                .iter()
                .find(|(f, _)| *f == SCHEMA_FILE)
                .ok_or_else(|| DatasetError::Malformed("missing schema".into()))?;
            let columns: Vec<Column> = serde_json::from_slice(&schema.1)?;
            let csv = blobs
                .iter()
                .find(|(f, _)| *f == CSV_FILE)
                .ok_or_else(|| DatasetError::Malformed("missing data.csv".into()))?;
            let matrix = decode_csv(&csv.1, columns)?;
            Dataset::tabular(manifest.id, matrix, manifest.labels)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded_rng, uniform01};
    use proptest::prelude::*;

    fn random_images(n: usize, h: usize, w: usize, seed: u64) -> Vec<TensorImage> {
        let mut rng = seeded_rng(seed);
        (0..n)
            .map(|_| TensorImage::from_fn(h, w, |_, _, _| uniform01(&mut rng) as f32))
            .collect()
    }

    #[test]
    fn empty_dataset_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::images("empty", vec![], None).unwrap();
        let m = write_dataset(&ds, dir.path()).unwrap();
        assert_eq!(m.count, 0);
        assert!(m.items.is_empty());
        assert_eq!(read_dataset(dir.path()).unwrap(), ds);
    }

    #[test]
    fn single_image_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = TensorImage::from_fn(2, 2, |y, x, c| (y * 6 + x * 3 + c) as f32 / 12.0);
        let ds = Dataset::images("one", vec![img], Some(vec![3])).unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), ds);
    }

    #[test]
    fn digest_stable_across_serializations() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ds = Dataset::images("synthetic", random_images(64, 8, 8, 5), None).unwrap();
        let ma = write_dataset(&ds, a.path()).unwrap();
        let mb = write_dataset(&ds, b.path()).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(ma.content_digest(), ds.content_digest().unwrap());
    }

    #[test]
    fn mixed_shapes_rejected() {
        let imgs = vec![TensorImage::filled(2, 2, 0.0), TensorImage::filled(3, 2, 0.0)];
        assert!(matches!(
            Dataset::images("x", imgs, None),
            Err(DatasetError::ShapeMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn tampered_file_detected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::images("t", random_images(2, 2, 2, 1), None).unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let path = dir.path().join("item_00001.f32");
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] ^= 1;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(DatasetError::Digest { .. })));
    }

    #[test]
    fn tabular_round_trip_with_quoting() {
        let dir = tempfile::tempdir().unwrap();
        let cols = vec![
            Column::numeric("age"),
            Column::categorical("city, state", &["a \"quoted\"", "b,c"]),
            Column::numeric("income"),
        ];
        let t = TabularMatrix::new(cols, vec![31.5, 1.0, 0.1, -2.0, 0.0, 1e-310]).unwrap();
        let ds = Dataset::tabular("tab", t, Some(vec![0, 1])).unwrap();
        let m = write_dataset(&ds, dir.path()).unwrap();
        assert_eq!(m.shape, vec![2, 3]);
        assert_eq!(read_dataset(dir.path()).unwrap(), ds);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn image_round_trip_is_bit_exact(
            n in 0usize..4, h in 1usize..6, w in 1usize..6,
            values in proptest::collection::vec(0.0f32..=1.0, 0..(4 * 6 * 6 * 3))
        ) {
            let mut it = values.into_iter().cycle();
            let imgs: Vec<TensorImage> = (0..n)
                .map(|_| TensorImage::from_fn(h, w, |_, _, _| it.next().unwrap_or(0.25)))
                .collect();
            let dir = tempfile::tempdir().unwrap();
            let ds = Dataset::images("p", imgs, None).unwrap();
            write_dataset(&ds, dir.path()).unwrap();
            let back = read_dataset(dir.path()).unwrap();
            let a: Vec<u32> = ds.as_images().unwrap().iter().flat_map(|i| i.data().iter().map(|v| v.to_bits())).collect();
            let b: Vec<u32> = back.as_images().unwrap().iter().flat_map(|i| i.data().iter().map(|v| v.to_bits())).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn tabular_round_trip_is_bit_exact(cells in proptest::collection::vec(-1e12f64..1e12, 1..40)) {
            let cols = vec![Column::numeric("v")];
            let t = TabularMatrix::new(cols, cells).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let ds = Dataset::tabular("p", t, None).unwrap();
            write_dataset(&ds, dir.path()).unwrap();
            let back = read_dataset(dir.path()).unwrap();
            let a: Vec<u64> = ds.as_tabular().unwrap().data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.as_tabular().unwrap().data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
