//! Write-once artifact store.
//!
//! ```text
//! <root>/datasets/<dataset_id>/manifest.json, item files
//! <root>/runs/<run_id>/provenance.json
//! <root>/runs/<run_id>/index.json
//! <root>/runs/<run_id>/report.json, radar.json
//! <root>/runs/<run_id>/artifacts/<kind>/<name>
//! ```
//!
//! Artifacts are created with `create_new` and never rewritten. The index is
//! rebuilt atomically (write to a temporary file, then rename) after every put.

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::sha256_hex;
use crate::dataset::{self, Dataset, DatasetError, DatasetManifest};
use crate::provenance::ProvenanceLog;

pub const PROVENANCE_FILE: &str = "provenance.json";
pub const INDEX_FILE: &str = "index.json";
pub const REPORT_FILE: &str = "report.json";
pub const RADAR_FILE: &str = "radar.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("artifact {run_id}/{kind}/{name} already exists")]
    Duplicate { run_id: String, kind: ArtifactKind, name: String },
    #[error("artifact {run_id}/{kind}/{name} not found")]
    MissingArtifact { run_id: String, kind: ArtifactKind, name: String },
    #[error("run `{0}` not found")]
    UnknownRun(String),
    #[error("dataset `{0}` not found")]
    UnknownDataset(String),
    #[error("dataset `{0}` already stored with different content")]
    DatasetConflict(String),
    #[error("`{0}` is not a valid identifier")]
    BadName(String),
    #[error("stored bytes of {0} do not match the recorded digest")]
    Corrupt(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Dataset,
    Predictions,
    Masks,
    Summaries,
    Metrics,
    Report,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 6] = [
        ArtifactKind::Dataset,
        ArtifactKind::Predictions,
        ArtifactKind::Masks,
        ArtifactKind::Summaries,
        ArtifactKind::Metrics,
        ArtifactKind::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::Dataset => "dataset",
            ArtifactKind::Predictions => "predictions",
            ArtifactKind::Masks => "masks",
            ArtifactKind::Summaries => "summaries",
            ArtifactKind::Metrics => "metrics",
            ArtifactKind::Report => "report",
        }
    }
}

impl std::fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Location-free reference carried in service responses and provenance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub kind: ArtifactKind,
    pub name: String,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub run_id: String,
    pub kind: ArtifactKind,
    pub name: String,
    pub uri: String,
    pub digest: String,
}

impl RunArtifact {
    pub fn to_ref(&self) -> ArtifactRef {
        ArtifactRef {
            kind: self.kind,
            name: self.name.clone(),
            digest: self.digest.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunIndex {
    pub run_id: String,
    pub artifacts: Vec<RunArtifact>,
}

/// Identifiers become path components, so only a conservative alphabet is accepted.
pub fn check_name(name: &str) -> Result<(), StoreError> {
    let ok = !name.is_empty()
        && name.len() <= 200
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | '+'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::BadName(name.to_string()))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn write_new(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut f = OpenOptions::new().write(true).create_new(true).open(path)?;
    f.write_all(bytes)?;
    f.sync_all()
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    index_lock: Mutex<()>,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join("runs"))?;
        fs::create_dir_all(root.join("datasets"))?;
        Ok(Self {
            root,
            index_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join("runs").join(run_id)
    }

    pub fn dataset_dir(&self, id: &str) -> PathBuf {
        self.root.join("datasets").join(id)
    }

    fn artifact_path(&self, run_id: &str, kind: ArtifactKind, name: &str) -> PathBuf {
        self.run_dir(run_id).join("artifacts").join(kind.as_str()).join(name)
    }

    pub fn run_exists(&self, run_id: &str) -> bool {
        check_name(run_id).is_ok() && self.run_dir(run_id).is_dir()
    }

    /// Writes a new artifact. Fails if `(run_id, kind, name)` was written before.
    pub fn put(&self, run_id: &str, kind: ArtifactKind, name: &str, bytes: &[u8]) -> Result<RunArtifact, StoreError> {
        check_name(run_id)?;
        check_name(name)?;
        let path = self.artifact_path(run_id, kind, name);
        fs::create_dir_all(path.parent().expect("artifact path has a parent"))?;
        match write_new(&path, bytes) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                return Err(StoreError::Duplicate {
                    run_id: run_id.into(),
                    kind,
                    name: name.into(),
                })
            }
            Err(e) => return Err(e.into()),
        }
        let artifact = RunArtifact {
            run_id: run_id.into(),
            kind,
            name: name.into(),
            uri: format!("runs/{run_id}/artifacts/{kind}/{name}"),
            digest: sha256_hex(bytes),
        };
        self.record_in_index(&artifact)?;
        Ok(artifact)
    }

    /// Like [`put`](Self::put), but an existing artifact with identical bytes is
    /// returned instead of rejected. Different bytes still fail.
    pub fn put_idempotent(
        &self,
        run_id: &str,
        kind: ArtifactKind,
        name: &str,
        bytes: &[u8],
    ) -> Result<RunArtifact, StoreError> {
        match self.put(run_id, kind, name, bytes) {
            Err(StoreError::Duplicate { .. }) => {
                let (existing, stored) = self.get(run_id, kind, name)?;
                if stored == bytes {
                    Ok(existing)
                } else {
                    Err(StoreError::Duplicate {
                        run_id: run_id.into(),
                        kind,
                        name: name.into(),
                    })
                }
            }
            other => other,
        }
    }

    pub fn get(&self, run_id: &str, kind: ArtifactKind, name: &str) -> Result<(RunArtifact, Vec<u8>), StoreError> {
        check_name(run_id)?;
        check_name(name)?;
        let path = self.artifact_path(run_id, kind, name);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(StoreError::MissingArtifact {
                    run_id: run_id.into(),
                    kind,
                    name: name.into(),
                })
            }
            Err(e) => return Err(e.into()),
        };
        let artifact = RunArtifact {
            run_id: run_id.into(),
            kind,
            name: name.into(),
            uri: format!("runs/{run_id}/artifacts/{kind}/{name}"),
            digest: sha256_hex(&bytes),
        };
        Ok((artifact, bytes))
    }

    /// Fetches an artifact and checks it against the digest in `r`.
    pub fn get_ref(&self, run_id: &str, r: &ArtifactRef) -> Result<Vec<u8>, StoreError> {
        let (a, bytes) = self.get(run_id, r.kind, &r.name)?;
        if a.digest != r.digest {
            return Err(StoreError::Corrupt(a.uri));
        }
        Ok(bytes)
    }

    pub fn get_json<T: serde::de::DeserializeOwned>(&self, run_id: &str, r: &ArtifactRef) -> Result<T, StoreError> {
        Ok(serde_json::from_slice(&self.get_ref(run_id, r)?)?)
    }

    /// Adds `artifact` to the run index. The index keeps the digest seen at
    /// write time, which is what tamper checks compare against.
    fn record_in_index(&self, artifact: &RunArtifact) -> Result<(), StoreError> {
        let _guard = self.index_lock.lock().unwrap_or_else(|p| p.into_inner());
        // roles served from separate processes share the run directory
        let lock = fs::File::create(self.run_dir(&artifact.run_id).join(".index.lock"))?;
        lock.lock()?;
        let path = self.run_dir(&artifact.run_id).join(INDEX_FILE);
        let mut index = match fs::read(&path) {
            Ok(b) => serde_json::from_slice(&b)?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => RunIndex {
                run_id: artifact.run_id.clone(),
                artifacts: Vec::new(),
            },
            Err(e) => return Err(e.into()),
        };
        let key = |a: &RunArtifact| (a.kind.as_str(), a.name.clone());
        match index.artifacts.binary_search_by(|a| key(a).cmp(&key(artifact))) {
            Ok(_) => {}
            Err(pos) => index.artifacts.insert(pos, artifact.clone()),
        }
        write_atomic(&path, &serde_json::to_vec_pretty(&index)?)?;
        Ok(())
    }

    pub fn index(&self, run_id: &str) -> Result<RunIndex, StoreError> {
        if !self.run_exists(run_id) {
            return Err(StoreError::UnknownRun(run_id.into()));
        }
        match fs::read(self.run_dir(run_id).join(INDEX_FILE)) {
            Ok(b) => Ok(serde_json::from_slice(&b)?),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(RunIndex {
                run_id: run_id.into(),
                artifacts: Vec::new(),
            }),
            Err(e) => Err(e.into()),
        }
    }

    /// Checks every indexed artifact against its stored bytes; returns the corrupt ones.
    pub fn verify_run(&self, run_id: &str) -> Result<Vec<RunArtifact>, StoreError> {
        let index = self.index(run_id)?;
        let mut bad = Vec::new();
        for a in index.artifacts {
            match self.get(run_id, a.kind, &a.name) {
                Ok((now, _)) if now.digest == a.digest => {}
                _ => bad.push(a),
            }
        }
        Ok(bad)
    }

    /// Stores a dataset under its id. Storing identical content twice is a no-op.
    pub fn put_dataset(&self, ds: &Dataset) -> Result<DatasetManifest, StoreError> {
        check_name(&ds.id)?;
        let dir = self.dataset_dir(&ds.id);
        let manifest = ds.manifest()?;
        if dir.join(dataset::MANIFEST_FILE).is_file() {
            let existing = dataset::read_manifest(&dir)?;
            if existing.content_digest() != manifest.content_digest() {
                return Err(StoreError::DatasetConflict(ds.id.clone()));
            }
            return Ok(existing);
        }
        // write into a sibling directory and rename so readers never see partial data
        let staging = self.root.join("datasets").join(format!(".staging-{}-{}", ds.id, std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        let written = dataset::write_dataset(ds, &staging)?;
        match fs::rename(&staging, &dir) {
            Ok(()) => Ok(written),
            Err(_) if dir.join(dataset::MANIFEST_FILE).is_file() => {
                fs::remove_dir_all(&staging)?;
                let existing = dataset::read_manifest(&dir)?;
                if existing.content_digest() != written.content_digest() {
                    return Err(StoreError::DatasetConflict(ds.id.clone()));
                }
                Ok(existing)
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn dataset_manifest(&self, id: &str) -> Result<DatasetManifest, StoreError> {
        if check_name(id).is_err() || !self.dataset_dir(id).join(dataset::MANIFEST_FILE).is_file() {
            return Err(StoreError::UnknownDataset(id.into()));
        }
        Ok(dataset::read_manifest(&self.dataset_dir(id))?)
    }

    pub fn get_dataset(&self, id: &str) -> Result<Dataset, StoreError> {
        self.dataset_manifest(id)?;
        Ok(dataset::read_dataset(&self.dataset_dir(id))?)
    }

    pub fn write_provenance(&self, log: &ProvenanceLog) -> Result<(), StoreError> {
        check_name(&log.run_id)?;
        let dir = self.run_dir(&log.run_id);
        fs::create_dir_all(&dir)?;
        write_atomic(&dir.join(PROVENANCE_FILE), &serde_json::to_vec_pretty(log)?)?;
        Ok(())
    }

    pub fn read_provenance(&self, run_id: &str) -> Result<ProvenanceLog, StoreError> {
        if !self.run_exists(run_id) {
            return Err(StoreError::UnknownRun(run_id.into()));
        }
        match fs::read(self.run_dir(run_id).join(PROVENANCE_FILE)) {
            Ok(b) => Ok(serde_json::from_slice(&b)?),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::UnknownRun(run_id.into())),
            Err(e) => Err(e.into()),
        }
    }

    /// Writes a top-level run file (report, radar) once.
    pub fn put_run_file(&self, run_id: &str, file: &str, bytes: &[u8]) -> Result<(), StoreError> {
        check_name(run_id)?;
        let dir = self.run_dir(run_id);
        fs::create_dir_all(&dir)?;
        match write_new(&dir.join(file), bytes) {
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(StoreError::Duplicate {
                run_id: run_id.into(),
                kind: ArtifactKind::Report,
                name: file.into(),
            }),
            other => Ok(other?),
        }
    }

    pub fn read_run_file(&self, run_id: &str, file: &str) -> Result<Vec<u8>, StoreError> {
        if !self.run_exists(run_id) {
            return Err(StoreError::UnknownRun(run_id.into()));
        }
        match fs::read(self.run_dir(run_id).join(file)) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::MissingArtifact {
                run_id: run_id.into(),
                kind: ArtifactKind::Report,
                name: file.into(),
            }),
            Err(e) => Err(e.into()),
        }
    }

    pub fn list_runs(&self) -> Result<Vec<String>, StoreError> {
        let mut runs: Vec<String> = fs::read_dir(self.root.join("runs"))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        runs.sort();
        Ok(runs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    fn store() -> (tempfile::TempDir, Store) {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open(dir.path()).unwrap();
        (dir, s)
    }

    #[test]
    fn put_get_round_trip() {
        let (_d, s) = store();
        let a = s.put("r1", ArtifactKind::Predictions, "p.json", b"[1,2]").unwrap();
        let (b, bytes) = s.get("r1", ArtifactKind::Predictions, "p.json").unwrap();
        assert_eq!(a, b);
        assert_eq!(bytes, b"[1,2]");
        assert_eq!(s.index("r1").unwrap().artifacts, vec![a]);
    }

    #[test]
    fn write_once() {
        let (_d, s) = store();
        s.put("r1", ArtifactKind::Metrics, "m", b"1").unwrap();
        assert!(matches!(s.put("r1", ArtifactKind::Metrics, "m", b"1"), Err(StoreError::Duplicate { .. })));
        assert!(s.put_idempotent("r1", ArtifactKind::Metrics, "m", b"1").is_ok());
        assert!(s.put_idempotent("r1", ArtifactKind::Metrics, "m", b"2").is_err());
        assert_eq!(s.get("r1", ArtifactKind::Metrics, "m").unwrap().1, b"1");
    }

    #[test]
    fn missing_and_bad_names() {
        let (_d, s) = store();
        assert!(matches!(
            s.get("nope", ArtifactKind::Masks, "x"),
            Err(StoreError::MissingArtifact { .. })
        ));
        assert!(matches!(s.index("nope"), Err(StoreError::UnknownRun(_))));
        assert!(matches!(s.put("../x", ArtifactKind::Masks, "x", b""), Err(StoreError::BadName(_))));
        assert!(matches!(s.put("r", ArtifactKind::Masks, "a/b", b""), Err(StoreError::BadName(_))));
    }

    #[test]
    fn tamper_detected() {
        let (d, s) = store();
        let a = s.put("r1", ArtifactKind::Masks, "m.json", b"[0.5]").unwrap();
        fs::write(d.path().join(&a.uri), b"[0.6]").unwrap();
        assert_eq!(s.verify_run("r1").unwrap(), vec![a.clone()]);
        assert!(matches!(s.get_ref("r1", &a.to_ref()), Err(StoreError::Corrupt(_))));
    }

    #[test]
    fn datasets_round_trip_and_conflict() {
        let (_d, s) = store();
        let ds = synthetic::image_dataset(3, 1);
        let m1 = s.put_dataset(&ds).unwrap();
        let m2 = s.put_dataset(&ds).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(s.get_dataset(&ds.id).unwrap(), ds);
        let mut other = synthetic::image_dataset(3, 2);
        other.id = ds.id.clone();
        assert!(matches!(s.put_dataset(&other), Err(StoreError::DatasetConflict(_))));
        assert!(matches!(s.get_dataset("missing"), Err(StoreError::UnknownDataset(_))));
    }

    #[test]
    fn concurrent_puts_keep_a_complete_index() {
        let (_d, s) = store();
        std::thread::scope(|scope| {
            for t in 0..8 {
                let s = &s;
                scope.spawn(move || {
                    for i in 0..10 {
                        s.put("r", ArtifactKind::Metrics, &format!("m{t}-{i}"), b"x").unwrap();
                    }
                });
            }
        });
        assert_eq!(s.index("r").unwrap().artifacts.len(), 80);
    }
}
