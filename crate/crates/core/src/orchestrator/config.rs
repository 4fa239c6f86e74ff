//! Run configuration: parsing, defaults and validation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::canonical::digest_value;
use crate::dataset::DatasetKind;
use crate::rng::derive_seed;
use crate::service::Role;
use crate::store::check_name;
use crate::types::{PerturbationKind, PerturbationSpec};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_PARALLELISM: usize = 4;
pub const DEFAULT_TIMEOUT_SECS: u64 = 300;
pub const DEFAULT_TOP_N: usize = 5;

/// Top-level fields that never enter the config digest: they name where and
/// how fast a run executes, not what it computes.
pub const UNDIGESTED_FIELDS: [&str; 5] = ["run_id", "services", "parallelism", "timeout_secs", "energy_watts"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    Cost,
    Performance,
    Deviation,
    Robustness,
    Resilience,
}

impl PipelineKind {
    pub const ALL: [PipelineKind; 5] = [
        PipelineKind::Cost,
        PipelineKind::Performance,
        PipelineKind::Deviation,
        PipelineKind::Robustness,
        PipelineKind::Resilience,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineKind::Cost => "cost",
            PipelineKind::Performance => "performance",
            PipelineKind::Deviation => "deviation",
            PipelineKind::Robustness => "robustness",
            PipelineKind::Resilience => "resilience",
        }
    }

    pub fn needs_explainer(self) -> bool {
        matches!(self, PipelineKind::Cost | PipelineKind::Deviation | PipelineKind::Resilience)
    }

    pub fn needs_perturbations(self) -> bool {
        matches!(self, PipelineKind::Robustness | PipelineKind::Resilience)
    }
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `"model_name"` accepts one name or a list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    pub fn to_vec(&self) -> Vec<String> {
        match self {
            OneOrMany::One(s) => vec![s.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// Generate the dataset instead of expecting it in the store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub kind: DatasetKind,
    pub count: usize,
    pub seed: u64,
    /// Image side length; defaults to the synthetic benchmark size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub model_name: OneOrMany,
    #[serde(default)]
    pub algorithms: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSource>,
}

impl DatasetEntry {
    pub fn models(&self) -> Vec<String> {
        self.model_name.to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XaiConfig {
    /// Single address for every service role, as in the original template.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    pub datasets: BTreeMap<String, DatasetEntry>,
}

fn default_pipelines() -> Vec<PipelineKind> {
    PipelineKind::ALL.to_vec()
}
fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_parallelism() -> usize {
    DEFAULT_PARALLELISM
}
fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_SECS
}
fn default_top_n() -> usize {
    DEFAULT_TOP_N
}
fn default_watts() -> f64 {
    crate::energy::DEFAULT_WATTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    /// Per-role base URLs. Roles missing here fall back to `xai_config.base_url`,
    /// then to in-process services.
    #[serde(default)]
    pub services: BTreeMap<Role, String>,
    pub xai_config: XaiConfig,
    /// Absent means the nine image corruptions (three kinds, severities 1 to 3).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbations: Option<Vec<PerturbationSpec>>,
    #[serde(default = "default_pipelines")]
    pub pipelines: Vec<PipelineKind>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    #[serde(default = "default_watts")]
    pub energy_watts: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("`{path}`: {message}")]
    Schema { path: String, message: String },
}

impl ConfigError {
    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn path(&self) -> Option<&str> {
        match self {
            ConfigError::Schema { path, .. } => Some(path),
            ConfigError::Syntax { .. } => None,
        }
    }
}

/// Image corruptions used when a config lists no perturbations. Gaussian
/// noise seeds derive from the run seed.
pub fn default_perturbations(seed: u64) -> Vec<PerturbationSpec> {
    let mut out = Vec::new();
    for kind in [PerturbationKind::GaussianNoise, PerturbationKind::DefocusBlur, PerturbationKind::Pixelate] {
        for severity in 1..=3u8 {
            let s = kind.is_stochastic().then(|| derive_seed(seed, out.len() as u64));
            out.push(PerturbationSpec { kind, severity, seed: s });
        }
    }
    out
}

impl PipelineConfig {
    /// Parses, fills defaults and validates.
    pub fn from_slice(bytes: &[u8]) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        let mut cfg: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if inner.is_data() {
                ConfigError::schema(path, strip_position(&inner))
            } else {
                ConfigError::Syntax {
                    line: inner.line(),
                    column: inner.column(),
                    message: strip_position(&inner),
                }
            }
        })?;
        cfg.fill_defaults();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_value(value: Value) -> Result<Self, ConfigError> {
        Self::from_slice(&serde_json::to_vec(&value).expect("value serialises"))
    }

    fn fill_defaults(&mut self) {
        let seed = self.seed;
        let specs = self.perturbations.get_or_insert_with(|| default_perturbations(seed));
        for (i, s) in specs.iter_mut().enumerate() {
            if s.kind.is_stochastic() && s.seed.is_none() {
                s.seed = Some(derive_seed(seed, i as u64));
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(id) = &self.run_id {
            check_name(id).map_err(|e| ConfigError::schema("run_id", e.to_string()))?;
        }
        if self.pipelines.is_empty() {
            return Err(ConfigError::schema("pipelines", "at least one pipeline is required"));
        }
        if self.parallelism == 0 {
            return Err(ConfigError::schema("parallelism", "must be at least 1"));
        }
        if self.timeout_secs == 0 {
            return Err(ConfigError::schema("timeout_secs", "must be at least 1"));
        }
        if self.top_n == 0 {
            return Err(ConfigError::schema("top_n", "must be at least 1"));
        }
        if !(self.energy_watts.is_finite() && self.energy_watts >= 0.0) {
            return Err(ConfigError::schema("energy_watts", "must be finite and non-negative"));
        }
        if self.xai_config.datasets.is_empty() {
            return Err(ConfigError::schema("xai_config.datasets", "at least one dataset is required"));
        }
        let needs_xai = self.pipelines.iter().any(|p| p.needs_explainer());
        for (id, entry) in &self.xai_config.datasets {
            let base = format!("xai_config.datasets.{id}");
            check_name(id).map_err(|e| ConfigError::schema(&base, e.to_string()))?;
            let models = entry.models();
            if models.is_empty() {
                return Err(ConfigError::schema(format!("{base}.model_name"), "at least one model is required"));
            }
            for (i, m) in models.iter().enumerate() {
                check_name(m).map_err(|e| ConfigError::schema(format!("{base}.model_name[{i}]"), e.to_string()))?;
            }
            for (i, a) in entry.algorithms.iter().enumerate() {
                check_name(a).map_err(|e| ConfigError::schema(format!("{base}.algorithms[{i}]"), e.to_string()))?;
            }
            if needs_xai && entry.algorithms.is_empty() {
                return Err(ConfigError::schema(
                    format!("{base}.algorithms"),
                    "the selected pipelines need at least one algorithm",
                ));
            }
            if let Some(s) = &entry.synthetic {
                if s.count == 0 {
                    return Err(ConfigError::schema(format!("{base}.synthetic.count"), "must be at least 1"));
                }
                if s.size.is_some_and(|n| n < crate::refmodel::GRID) {
                    return Err(ConfigError::schema(format!("{base}.synthetic.size"), "smaller than the model grid"));
                }
            }
        }
        let specs = self.perturbations.as_deref().unwrap_or_default();
        for (i, s) in specs.iter().enumerate() {
            s.validate()
                .map_err(|e| ConfigError::schema(format!("perturbations[{i}]"), e.to_string()))?;
        }
        if specs.is_empty() {
            if let Some(p) = self.pipelines.iter().find(|p| p.needs_perturbations()) {
                return Err(ConfigError::schema("perturbations", format!("pipeline `{p}` needs at least one perturbation")));
            }
        }
        Ok(())
    }

    pub fn perturbations(&self) -> &[PerturbationSpec] {
        self.perturbations.as_deref().unwrap_or_default()
    }

    pub fn has(&self, p: PipelineKind) -> bool {
        self.pipelines.contains(&p)
    }

    /// Normalised configuration with defaults filled, as stored in provenance.
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serialises")
    }

    /// Digest of everything that determines results.
    pub fn digest(&self) -> String {
        let mut v = self.to_value();
        if let Value::Object(map) = &mut v {
            for f in UNDIGESTED_FIELDS {
                map.remove(f);
            }
            if let Some(Value::Object(xai)) = map.get_mut("xai_config") {
                xai.remove("base_url");
            }
        }
        digest_value(&v)
    }

    /// Base URL for `role`, if the role is remote.
    pub fn service_url(&self, role: Role) -> Option<&str> {
        self.services
            .get(&role)
            .map(String::as_str)
            .or(self.xai_config.base_url.as_deref())
    }
}

fn strip_position(e: &serde_json::Error) -> String {
    let s = e.to_string();
    match s.rfind(" at line ") {
        Some(i) => s[..i].to_string(),
        None => s,
    }
}

/// Removes `//` line comments outside strings, as used in annotated templates.
pub fn strip_line_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        let mut in_str = false;
        let mut escaped = false;
        let mut cut = line.len();
        let bytes = line.as_bytes();
        for (i, &b) in bytes.iter().enumerate() {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
            } else if b == b'"' {
                in_str = true;
            } else if b == b'/' && bytes.get(i + 1) == Some(&b'/') {
                cut = i;
                break;
            }
        }
        out.push_str(&line[..cut]);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    const TEMPLATE: &str = r#"{
"xai_config": {
  "base_url": "xaiport.ddns.net:8003", //"address"
  "datasets": {
    "t1024_gaussian_2": {     //"datasets id"
      "model_name": "resnet", //"model name"
      "algorithms": [
        "GradCAM", //"XAI methods name"
        "HiResCAM",
        "GradCAMPlusPlus",
        "XgradCAM",
        "LayerCAM"
      ]
    }
  }
}
}"#;

    fn minimal() -> Value {
        json!({"xai_config": {"datasets": {"d": {"model_name": "refmodel", "algorithms": ["refgrad"]}}}})
    }

    #[test]
    fn annotated_template_is_valid() {
        let cfg = PipelineConfig::from_slice(strip_line_comments(TEMPLATE).as_bytes()).unwrap();
        assert_eq!(cfg.xai_config.datasets.len(), 1);
        let entry = &cfg.xai_config.datasets["t1024_gaussian_2"];
        assert_eq!(entry.models(), vec!["resnet"]);
        assert_eq!(entry.algorithms.len(), 5);
        assert_eq!(cfg.pipelines, PipelineKind::ALL.to_vec());
        assert_eq!(cfg.perturbations().len(), 9);
        assert_eq!(cfg.service_url(Role::Model), Some("xaiport.ddns.net:8003"));
    }

    #[test]
    fn missing_model_name_names_the_path() {
        let v = json!({"xai_config": {"datasets": {"d": {"algorithms": ["refgrad"]}}}});
        let err = PipelineConfig::from_value(v).unwrap_err();
        assert_eq!(err.path(), Some("xai_config.datasets.d"));
        assert!(err.to_string().contains("model_name"), "{err}");
    }

    #[test]
    fn empty_and_unknown_pipelines_rejected() {
        let mut v = minimal();
        v["pipelines"] = json!([]);
        assert_eq!(PipelineConfig::from_value(v.clone()).unwrap_err().path(), Some("pipelines"));
        v["pipelines"] = json!(["cost", "speed"]);
        assert_eq!(PipelineConfig::from_value(v).unwrap_err().path(), Some("pipelines[1]"));
    }

    #[test]
    fn syntax_error_has_position() {
        let err = PipelineConfig::from_slice(b"{\n  \"xai_config\": ,\n}").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn defaults_and_seeds_filled() {
        let cfg = PipelineConfig::from_value(minimal()).unwrap();
        assert_eq!(cfg.parallelism, DEFAULT_PARALLELISM);
        assert_eq!(cfg.timeout_secs, DEFAULT_TIMEOUT_SECS);
        assert!(cfg.perturbations().iter().all(|s| s.validate().is_ok()));
        let mut v = minimal();
        v["perturbations"] = json!([{"kind": "gaussian_noise", "severity": 1}]);
        let cfg = PipelineConfig::from_value(v).unwrap();
        assert_eq!(cfg.perturbations()[0].seed, Some(derive_seed(DEFAULT_SEED, 0)));
    }

    #[test]
    fn digest_ignores_placement_fields() {
        let a = PipelineConfig::from_value(minimal()).unwrap();
        let mut v = minimal();
        v["run_id"] = json!("other");
        v["parallelism"] = json!(1);
        v["services"] = json!({"model": "http://127.0.0.1:1"});
        v["xai_config"]["base_url"] = json!("http://h");
        let b = PipelineConfig::from_value(v).unwrap();
        assert_eq!(a.digest(), b.digest());
        let mut v = minimal();
        v["seed"] = json!(7);
        assert_ne!(a.digest(), PipelineConfig::from_value(v).unwrap().digest());
    }

    #[test]
    fn explainer_and_perturbation_requirements() {
        let v = json!({"xai_config": {"datasets": {"d": {"model_name": "m"}}}, "pipelines": ["deviation"]});
        assert_eq!(PipelineConfig::from_value(v).unwrap_err().path(), Some("xai_config.datasets.d.algorithms"));
        let v = json!({"xai_config": {"datasets": {"d": {"model_name": "m"}}}, "pipelines": ["performance"]});
        assert!(PipelineConfig::from_value(v).is_ok());
        let mut v = minimal();
        v["perturbations"] = json!([]);
        v["pipelines"] = json!(["robustness"]);
        assert_eq!(PipelineConfig::from_value(v).unwrap_err().path(), Some("perturbations"));
        let mut v = minimal();
        v["perturbations"] = json!([{"kind": "pixelate", "severity": 4}]);
        assert_eq!(PipelineConfig::from_value(v).unwrap_err().path(), Some("perturbations[0]"));
    }

    #[test]
    fn comment_stripping_keeps_strings() {
        assert_eq!(strip_line_comments("{\"a\": \"x//y\"} // c"), "{\"a\": \"x//y\"} \n");
    }
}
