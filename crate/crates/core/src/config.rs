//! Runtime configuration files (TOML or JSON, chosen by extension).

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::pipeline::{BatchPolicy, ExecutionMode, MockConfig, RuntimeConfig};

pub const BACKEND_KINDS: [&str; 2] = ["mock", "playback"];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown backend {0:?}; valid kinds: mock, playback")]
    UnknownBackend(String),
    #[error("config: {0}")]
    Invalid(String),
    #[error("unsupported config extension {0:?}; use .toml or .json")]
    Extension(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub batch_capacity: usize,
    pub max_wait_ms: u64,
    pub queue_capacity: usize,
    pub recognition_workers: usize,
    pub mode: ExecutionMode,
    /// Run on virtual time; only meaningful with the mock backend.
    pub simulated_clock: bool,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let rt = RuntimeConfig::default();
        Self {
            batch_capacity: rt.policy.capacity,
            max_wait_ms: rt.policy.max_wait.as_millis() as u64,
            queue_capacity: rt.queue_capacity,
            recognition_workers: rt.recognition_workers,
            mode: rt.mode,
            simulated_clock: false,
        }
    }
}

impl PipelineSection {
    pub fn runtime(&self) -> Result<RuntimeConfig, ConfigError> {
        let policy = BatchPolicy::new(self.batch_capacity, Duration::from_millis(self.max_wait_ms))
            .map_err(ConfigError::Invalid)?;
        let rt = RuntimeConfig {
            policy,
            queue_capacity: self.queue_capacity,
            recognition_workers: self.recognition_workers,
            mode: self.mode,
        };
        rt.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(rt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaybackConfig {
    pub keep_order: bool,
    /// With `keep_order = false`: rebuild order from relation matrices.
    pub use_relations: bool,
}

impl Default for PlaybackConfig {
    fn default() -> Self {
        Self {
            keep_order: true,
            use_relations: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Mock(MockConfig),
    Playback(PlaybackConfig),
}

impl BackendConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            BackendConfig::Mock(_) => "mock",
            BackendConfig::Playback(_) => "playback",
        }
    }

    /// Default settings for a named kind.
    pub fn named(kind: &str) -> Result<Self, ConfigError> {
        match kind {
            "mock" => Ok(BackendConfig::Mock(MockConfig::default())),
            "playback" => Ok(BackendConfig::Playback(PlaybackConfig::default())),
            other => Err(ConfigError::UnknownBackend(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FileConfig {
    pub pipeline: PipelineSection,
    pub backend: Option<BackendConfig>,
}

pub fn parse_config(text: &str, json: bool) -> Result<FileConfig, ConfigError> {
    let value: Value = if json {
        serde_json::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?
    } else {
        toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?
    };
    let Value::Object(mut top) = value else {
        return Err(ConfigError::Invalid("top level must be a table".into()));
    };
    let pipeline = match top.remove("pipeline") {
        Some(v) => serde_json::from_value(v).map_err(|e| ConfigError::Invalid(format!("[pipeline]: {e}")))?,
        None => PipelineSection::default(),
    };
    let backend = match top.remove("backend") {
        None => None,
        Some(v) => {
            let kind = v
                .get("kind")
                .and_then(Value::as_str)
                .ok_or_else(|| ConfigError::Invalid("[backend] needs a string `kind`".into()))?
                .to_string();
            if !BACKEND_KINDS.contains(&kind.as_str()) {
                return Err(ConfigError::UnknownBackend(kind));
            }
            Some(serde_json::from_value(v).map_err(|e| ConfigError::Invalid(format!("[backend]: {e}")))?)
        }
    };
    if let Some(extra) = top.keys().next() {
        return Err(ConfigError::Invalid(format!("unknown section [{extra}]")));
    }
    Ok(FileConfig { pipeline, backend })
}

pub fn load_config(path: &Path) -> Result<FileConfig, ConfigError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default().to_ascii_lowercase();
    let json = match ext.as_str() {
        "json" => true,
        "toml" => false,
        _ => return Err(ConfigError::Extension(ext)),
    };
    parse_config(&std::fs::read_to_string(path)?, json)
}

/// Files accepted by `parse --input`: a file, or every `.json` in a directory
/// in name order.
pub fn input_files(path: &Path) -> std::io::Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        files.sort();
        Ok(files)
    } else {
        std::fs::metadata(path)?;
        Ok(vec![path.to_path_buf()])
    }
}
