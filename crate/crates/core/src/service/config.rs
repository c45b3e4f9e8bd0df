use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acceptability::AcceptabilityThresholds;
use crate::segmentation::SegmenterConfig;
use crate::summarizer::GenerationParams;
use crate::sumsim::SumSimWeights;

use super::{ServiceError, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSource {
    Checkpoint { path: PathBuf },
    /// Echoes the first sentence of each segment.
    EchoStub {
        #[serde(default = "default_window")]
        window: usize,
    },
}

fn default_window() -> usize {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LmSource {
    Bigram { path: PathBuf },
    /// Uniform over the summarizer vocabulary (specials only for the stub).
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSource {
    /// Word-vector text file; hashed pseudo-vectors when absent.
    pub path: Option<PathBuf>,
    pub hash_seed: u64,
}

impl Default for EmbeddingSource {
    fn default() -> Self {
        Self { path: None, hash_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub bind: String,
    /// Static bearer token; no auth when unset.
    pub api_token: Option<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { bind: "127.0.0.1:8080".into(), api_token: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub segmenter: SegmenterConfig,
    pub embeddings: EmbeddingSource,
    pub model: ModelSource,
    pub language_model: LmSource,
    pub generation: GenerationParams,
    pub thresholds: AcceptabilityThresholds,
    pub weights: SumSimWeights,
    pub store_dir: PathBuf,
    pub server: ServerConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            segmenter: SegmenterConfig::default(),
            embeddings: EmbeddingSource::default(),
            model: ModelSource::EchoStub { window: default_window() },
            language_model: LmSource::Uniform,
            generation: GenerationParams::default(),
            thresholds: AcceptabilityThresholds::default(),
            weights: SumSimWeights::default(),
            store_dir: PathBuf::from("callsum-store"),
            server: ServerConfig::default(),
        }
    }
}

pub const ENV_MODEL_PATH: &str = "CALLSUM_MODEL_PATH";
pub const ENV_LM_PATH: &str = "CALLSUM_LM_PATH";
pub const ENV_EMBEDDINGS_PATH: &str = "CALLSUM_EMBEDDINGS_PATH";
pub const ENV_STORE_DIR: &str = "CALLSUM_STORE_DIR";
pub const ENV_API_TOKEN: &str = "CALLSUM_API_TOKEN";
pub const ENV_BIND: &str = "CALLSUM_BIND";

fn config_err(msg: impl Into<String>) -> ServiceError {
    ServiceError::new("INVALID_CONFIG", Stage::Config, msg)
}

impl PipelineConfig {
    /// Reads TOML, or JSON when the extension is `.json`. Relative paths are
    /// resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let raw = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut cfg = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json(&raw)?
        } else {
            Self::from_toml(&raw)?
        };
        cfg.resolve_relative(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn from_toml(raw: &str) -> Result<Self, ServiceError> {
        toml::from_str(raw).map_err(|e| config_err(e.to_string()))
    }

    pub fn from_json(raw: &str) -> Result<Self, ServiceError> {
        serde_json::from_str(raw).map_err(|e| config_err(e.to_string()))
    }

    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let ModelSource::Checkpoint { path } = &mut self.model {
            fix(path);
        }
        if let LmSource::Bigram { path } = &mut self.language_model {
            fix(path);
        }
        if let Some(p) = &mut self.embeddings.path {
            fix(p);
        }
        fix(&mut self.store_dir);
    }

    /// Applies `CALLSUM_*` overrides read through `var`.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) {
        if let Some(p) = var(ENV_MODEL_PATH) {
            self.model = ModelSource::Checkpoint { path: p.into() };
        }
        if let Some(p) = var(ENV_LM_PATH) {
            self.language_model = LmSource::Bigram { path: p.into() };
        }
        if let Some(p) = var(ENV_EMBEDDINGS_PATH) {
            self.embeddings.path = Some(p.into());
        }
        if let Some(p) = var(ENV_STORE_DIR) {
            self.store_dir = p.into();
        }
        if let Some(t) = var(ENV_API_TOKEN) {
            self.server.api_token = Some(t);
        }
        if let Some(b) = var(ENV_BIND) {
            self.server.bind = b;
        }
    }

    pub fn apply_process_env(&mut self) {
        self.apply_env(|k| std::env::var(k).ok().filter(|v| !v.is_empty()));
    }

    /// Checks value ranges and that every referenced path exists.
    pub fn validate(&self) -> Result<(), ServiceError> {
        self.segmenter.validate().map_err(|e| config_err(e.to_string()))?;
        self.thresholds.validate().map_err(|e| config_err(e.to_string()))?;
        self.weights.validate().map_err(|e| config_err(e.to_string()))?;
        if self.generation.num_beams == 0 || self.generation.num_candidates == 0 || self.generation.max_summary_tokens == 0 {
            return Err(config_err("generation beams, candidates and max_summary_tokens must be positive"));
        }
        let mut paths: Vec<&Path> = Vec::new();
        if let ModelSource::Checkpoint { path } = &self.model {
            paths.push(path);
        }
        if let LmSource::Bigram { path } = &self.language_model {
            paths.push(path);
        }
        if let Some(p) = &self.embeddings.path {
            paths.push(p);
        }
        for p in paths {
            if !p.exists() {
                return Err(config_err(format!("path does not exist: {}", p.display())));
            }
        }
        Ok(())
    }
}
