//! Engine configuration file (TOML).
//!
//! ```toml
//! [embedder]
//! kind = "local_hash"
//! dim = 256
//!
//! [llm]
//! kind = "mock"
//!
//! [metadata]
//! path = "metadata.csv"
//! [metadata.columns]
//! notebook_id = "Id"
//! # ...
//!
//! [[competitions]]
//! id = "titanic"
//! title = "Titanic"
//! description = "Predict survival on the Titanic."
//! notebooks_dir = "notebooks/titanic"
//! index_dir = "index/titanic"
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.
//! Secrets never live in the file: `api_key_env` names an environment variable.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ColumnMap;
use crate::embedder::EmbedderSpec;
use crate::generation::{LlmSpec, PromptOptions};
use crate::retrieval::SearchSettings;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetadataFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetadataConfig {
    pub path: PathBuf,
    /// Inferred from the file extension when absent.
    #[serde(default)]
    pub format: Option<MetadataFormat>,
    #[serde(default = "ColumnMap::identity")]
    pub columns: ColumnMap,
}

impl MetadataConfig {
    pub fn resolved_format(&self) -> MetadataFormat {
        self.format.unwrap_or_else(|| {
            match self.path.extension().and_then(|e| e.to_str()) {
                Some("jsonl") | Some("ndjson") | Some("json") => MetadataFormat::Jsonl,
                _ => MetadataFormat::Csv,
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompetitionConfig {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub description: String,
    pub notebooks_dir: PathBuf,
    pub index_dir: PathBuf,
    /// Optional CSV (`file,notebook_id`) overriding file-stem notebook ids.
    #[serde(default)]
    pub notebook_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    /// Emit the `sources` event before the answer tokens.
    pub sources_first: bool,
    /// Directory with the browser UI build, served at `/`.
    pub static_dir: Option<PathBuf>,
    /// JSON file where sessions are persisted between restarts.
    pub session_store: Option<PathBuf>,
    pub max_session_turns: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            sources_first: false,
            static_dir: None,
            session_store: None,
            max_session_turns: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(default)]
    pub embedder: EmbedderSpec,
    #[serde(default)]
    pub llm: LlmSpec,
    pub metadata: MetadataConfig,
    #[serde(default)]
    pub competitions: Vec<CompetitionConfig>,
    #[serde(default)]
    pub search: SearchSettings,
    #[serde(default)]
    pub prompt: PromptOptions,
    #[serde(default)]
    pub server: ServerConfig,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl EngineConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: EngineConfig = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, path)
    }

    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.metadata.path);
        for c in &mut self.competitions {
            resolve(base, &mut c.notebooks_dir);
            resolve(base, &mut c.index_dir);
            if let Some(m) = &mut c.notebook_manifest {
                resolve(base, m);
            }
        }
        if let Some(d) = &mut self.server.static_dir {
            resolve(base, d);
        }
        if let Some(s) = &mut self.server.session_store {
            resolve(base, s);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| ConfigError::Invalid(m);
        self.embedder.validate().map_err(|e| invalid(e.to_string()))?;
        self.llm.validate().map_err(|e| invalid(e.to_string()))?;
        self.search.validate().map_err(|e| invalid(format!("search: {e}")))?;
        self.metadata
            .columns
            .validate()
            .map_err(|e| invalid(format!("metadata.columns: {e}")))?;
        let mut ids: Vec<&str> = self.competitions.iter().map(|c| c.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(invalid(format!("competition `{}` listed twice", w[0])));
        }
        if self.server.max_session_turns < 2 {
            return Err(invalid("server.max_session_turns must be at least 2".into()));
        }
        Ok(())
    }

    pub fn competition(&self, id: &str) -> Option<&CompetitionConfig> {
        self.competitions.iter().find(|c| c.id == id)
    }
}
