//! Loading a directory of PNG files as an image dataset.

use std::path::{Path, PathBuf};

use thiserror::Error;
use xaas_core::canonical::derived_id;
use xaas_core::dataset::{Dataset, DatasetError};
use xaas_core::types::TensorImage;

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("{0}: {1}")]
    Decode(PathBuf, image::ImageError),
    #[error("no .png files in {0}")]
    Empty(PathBuf),
    #[error("{path} is {got:?}, the first image is {want:?}")]
    Size {
        path: PathBuf,
        got: (usize, usize),
        want: (usize, usize),
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Leading class index of a file stem such as `3_cat.png` or `3-0017.png`.
fn label_of(path: &Path) -> Option<usize> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem.chars().take_while(char::is_ascii_digit).collect();
    let rest = &stem[digits.len()..];
    if digits.is_empty() || !(rest.starts_with('_') || rest.starts_with('-')) {
        return None;
    }
    digits.parse().ok()
}

/// Reads every `*.png` in `dir`, in file-name order, as RGB in `[0, 1]`.
/// Labels are taken from `<class>_` file-name prefixes when every file has
/// one. The id defaults to one derived from the pixel content.
pub fn import_png_dir(dir: &Path, id: Option<&str>) -> Result<Dataset, ImportError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| ImportError::Io(dir.into(), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    if paths.is_empty() {
        return Err(ImportError::Empty(dir.into()));
    }
    paths.sort();
    let mut images = Vec::with_capacity(paths.len());
    let mut want = None;
    for p in &paths {
        let rgb = image::open(p).map_err(|e| ImportError::Decode(p.clone(), e))?.to_rgb32f();
        let size = (rgb.height() as usize, rgb.width() as usize);
        if *want.get_or_insert(size) != size {
            return Err(ImportError::Size {
                path: p.clone(),
                got: size,
                want: want.unwrap(),
            });
        }
        let data: Vec<f32> = rgb.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        images.push(TensorImage::new(size.0, size.1, data).expect("rgb buffer matches its size"));
    }
    let labels: Option<Vec<usize>> = paths.iter().map(|p| label_of(p)).collect();
    let tmp = Dataset::images("import", images, labels)?;
    let id = match id {
        Some(id) => id.to_string(),
        None => derived_id("png", &tmp.len().to_string(), tmp.content_digest()?.as_bytes()),
    };
    Ok(Dataset { id, ..tmp })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_from_prefixes() {
        assert_eq!(label_of(Path::new("a/3_cat.png")), Some(3));
        assert_eq!(label_of(Path::new("12-x.png")), Some(12));
        assert_eq!(label_of(Path::new("cat.png")), None);
        assert_eq!(label_of(Path::new("2024.png")), None);
    }
}
