//! Engine configuration.
//!
//! One TOML file; relative paths are resolved against the file's directory.
//! Secrets never live in the file: HTTP profiles name the environment
//! variable holding their bearer token. Exactly one default generation
//! profile and one default judge profile are required.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusHandle, Modality};
use crate::eval::EvalBackend;
use crate::gateway::{
    ConcurrencyGate, Gateway, HttpBackend, RateLimiter, RetryPolicy, TranscriptStore,
};
use crate::gmm::RecallConfig;
use crate::workflow::WorkflowLimits;

fn default_concurrency() -> usize {
    4
}

fn default_max_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    250
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendProfile {
    Http {
        base_url: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_concurrency")]
        concurrency: usize,
        #[serde(default)]
        rate_per_sec: Option<f64>,
        #[serde(default)]
        burst: Option<f64>,
        #[serde(default = "default_max_retries")]
        max_retries: u32,
        #[serde(default = "default_backoff_ms")]
        backoff_ms: u64,
        #[serde(default)]
        few_shot: bool,
    },
    Scripted {
        transcript_dir: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageBudgets {
    pub thumbnail_px: u32,
    pub full_px: u32,
}

impl Default for ImageBudgets {
    fn default() -> Self {
        ImageBudgets {
            thumbnail_px: 512,
            full_px: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub listen: String,
    pub workers: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: "127.0.0.1:7171".to_string(),
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EngineConfig {
    pub index_dir: PathBuf,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Per-modality query-vector sidecar files, keyed by query uid.
    #[serde(default)]
    pub query_embeddings: BTreeMap<Modality, PathBuf>,
    /// Per-modality HTTP profiles used to embed ad-hoc query text.
    #[serde(default)]
    pub embedding_backends: BTreeMap<Modality, String>,
    #[serde(default)]
    pub recall: RecallConfig,
    #[serde(default)]
    pub workflow: WorkflowLimits,
    #[serde(default)]
    pub images: ImageBudgets,
    #[serde(default)]
    pub backends: BTreeMap<String, BackendProfile>,
    pub default_generation: String,
    pub default_judge: String,
    #[serde(default)]
    pub service: ServiceConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("unknown backend profile `{0}`")]
    UnknownProfile(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}

impl EngineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        if !path.is_file() {
            return Err(ConfigError::MissingFile(path.to_path_buf()));
        }
        let raw = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut config: EngineConfig = toml::from_str(&raw).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            source: Box::new(e),
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        resolve(&mut self.index_dir);
        if let Some(dataset) = &mut self.dataset {
            resolve(dataset);
        }
        for path in self.query_embeddings.values_mut() {
            resolve(path);
        }
        for profile in self.backends.values_mut() {
            if let BackendProfile::Scripted { transcript_dir } = profile {
                resolve(transcript_dir);
            }
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.recall
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for name in [&self.default_generation, &self.default_judge] {
            if !self.backends.contains_key(name) {
                return Err(ConfigError::UnknownProfile(name.clone()));
            }
        }
        for name in self.embedding_backends.values() {
            if !self.backends.contains_key(name) {
                return Err(ConfigError::UnknownProfile(name.clone()));
            }
        }
        Ok(())
    }

    /// Existence checks for everything the running engine will touch.
    /// Separate from [`EngineConfig::load`] so `ingest` can run first.
    pub fn validate_runtime(&self) -> Result<(), ConfigError> {
        if !self.index_dir.is_dir() {
            return Err(ConfigError::MissingFile(self.index_dir.clone()));
        }
        if let Some(dataset) = &self.dataset {
            if !dataset.is_file() {
                return Err(ConfigError::MissingFile(dataset.clone()));
            }
        }
        for path in self.query_embeddings.values() {
            if !path.is_file() {
                return Err(ConfigError::MissingFile(path.clone()));
            }
        }
        for profile in self.backends.values() {
            if let BackendProfile::Scripted { transcript_dir } = profile {
                if !transcript_dir.is_dir() {
                    return Err(ConfigError::MissingFile(transcript_dir.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn profile(&self, name: &str) -> Result<&BackendProfile, ConfigError> {
        self.backends
            .get(name)
            .ok_or_else(|| ConfigError::UnknownProfile(name.to_string()))
    }

    /// Workflow limits with the profile's few-shot switch applied.
    pub fn limits_for(&self, profile_name: &str) -> Result<WorkflowLimits, ConfigError> {
        let mut limits = self.workflow.clone();
        if let BackendProfile::Http { few_shot, .. } = self.profile(profile_name)? {
            limits.few_shot = *few_shot;
        }
        Ok(limits)
    }

    fn http_gateway(
        &self,
        profile_name: &str,
        corpus: &Arc<CorpusHandle>,
    ) -> Result<Gateway, ConfigError> {
        match self.profile(profile_name)? {
            BackendProfile::Scripted { .. } => Err(ConfigError::Invalid(format!(
                "profile `{profile_name}` is scripted; a session key is required"
            ))),
            BackendProfile::Http {
                base_url,
                model,
                api_key_env,
                concurrency,
                rate_per_sec,
                burst,
                max_retries,
                backoff_ms,
                ..
            } => {
                let backend = HttpBackend::new(
                    base_url,
                    model,
                    api_key_env.as_deref(),
                    corpus.clone() as Arc<dyn crate::gateway::ImageProvider>,
                )
                .with_resolution_budgets(self.images.thumbnail_px, self.images.full_px);
                let mut gateway = Gateway::new(
                    Arc::new(backend),
                    RetryPolicy {
                        max_retries: *max_retries,
                        base_delay: std::time::Duration::from_millis(*backoff_ms),
                    },
                )
                .with_concurrency(Arc::new(ConcurrencyGate::new(*concurrency)));
                if let Some(rate) = rate_per_sec {
                    let burst = burst.unwrap_or(*concurrency as f64);
                    gateway = gateway.with_rate_limit(Arc::new(RateLimiter::new(*rate, burst)));
                }
                Ok(gateway)
            }
        }
    }

    /// Gateway for one ask-style session. Scripted profiles open the
    /// transcript keyed `<uid>.multi-agent` unless an explicit transcript
    /// file override is given.
    pub fn ask_gateway(
        &self,
        corpus: &Arc<CorpusHandle>,
        uid: &str,
        transcript_override: Option<&Path>,
    ) -> Result<Gateway, ConfigError> {
        if let Some(path) = transcript_override {
            let session = crate::gateway::ScriptedSession::from_jsonl(path)?;
            return Ok(Gateway::scripted(Arc::new(session)));
        }
        match self.profile(&self.default_generation)? {
            BackendProfile::Scripted { transcript_dir } => {
                let store = TranscriptStore::new(transcript_dir.clone());
                let session = store.open(&format!("{uid}.multi-agent"))?;
                Ok(Gateway::scripted(Arc::new(session)))
            }
            BackendProfile::Http { .. } => self.http_gateway(&self.default_generation, corpus),
        }
    }

    /// Evaluation backend from the default generation/judge profiles.
    /// A scripted generation profile requires the judge to share it, since
    /// both consume one transcript per query run.
    pub fn eval_backend(&self, corpus: &Arc<CorpusHandle>) -> Result<EvalBackend, ConfigError> {
        match self.profile(&self.default_generation)? {
            BackendProfile::Scripted { transcript_dir } => {
                if self.default_judge != self.default_generation {
                    return Err(ConfigError::Invalid(
                        "a scripted generation profile requires default_judge = default_generation"
                            .to_string(),
                    ));
                }
                Ok(EvalBackend::Scripted(TranscriptStore::new(
                    transcript_dir.clone(),
                )))
            }
            BackendProfile::Http { .. } => Ok(EvalBackend::Live {
                generation: self.http_gateway(&self.default_generation, corpus)?,
                judge: self.http_gateway(&self.default_judge, corpus)?,
            }),
        }
    }

    /// Embeds ad-hoc query text through the configured per-modality
    /// embedding profiles.
    pub fn embed_query(&self, text: &str) -> Result<BTreeMap<Modality, Vec<f64>>, ConfigError> {
        if self.embedding_backends.is_empty() {
            return Err(ConfigError::Invalid(
                "no embedding_backends configured; ad-hoc query text cannot be embedded".into(),
            ));
        }
        let mut out = BTreeMap::new();
        for (&modality, profile_name) in &self.embedding_backends {
            let BackendProfile::Http {
                base_url,
                model,
                api_key_env,
                ..
            } = self.profile(profile_name)?
            else {
                return Err(ConfigError::Invalid(format!(
                    "embedding profile `{profile_name}` must be an http profile"
                )));
            };
            let backend = HttpBackend::new(
                base_url,
                model,
                api_key_env.as_deref(),
                Arc::new(crate::gateway::http::NoImages),
            );
            let vector = backend
                .embed(text)
                .map_err(|e| ConfigError::Invalid(format!("embedding call failed: {e}")))?;
            out.insert(modality, vector);
        }
        Ok(out)
    }
}
