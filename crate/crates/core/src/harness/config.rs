//! The audit config file: one JSON document, `"schema": 1`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::battery::{load_registry, RegistryError, TermsConfig};
use crate::generation::{GenerationParams, InjectionTable, ModelSpec, DEFAULT_MAX_SENTENCES};
use crate::topics::{Granularity, LdaParams};

pub const SCHEMA_VERSION: u32 = 1;

/// File name reserved for the all-models analysis.
pub const POOLED_ID: &str = "pooled";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config is not valid JSON for this schema: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported config schema {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("terms: {0}")]
    Registry(#[from] RegistryError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub schema: u32,
    /// Omitted: the built-in term lists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms: Option<TermsConfig>,
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default)]
    pub sentiment: SentimentConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub topics: TopicsConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub params: GenerationParams,
    pub models: Vec<ModelSpec>,
    pub concurrency: usize,
    pub retries: u32,
    pub initial_backoff_ms: u64,
    pub timeout_secs: u64,
    pub max_sentences: usize,
    pub stub: StubConfig,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            params: GenerationParams::default(),
            models: Vec::new(),
            concurrency: 4,
            retries: 3,
            initial_backoff_ms: 1000,
            timeout_secs: 60,
            max_sentences: DEFAULT_MAX_SENTENCES,
            stub: StubConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StubConfig {
    pub injections: InjectionTable,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SentimentConfig {
    /// TSV lexicon replacing the bundled one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correction {
    #[default]
    Holm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub alpha_level: f64,
    pub correction: Correction,
    pub high_low_q: usize,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            alpha_level: 0.05,
            correction: Correction::Holm,
            high_low_q: 5,
            bootstrap_resamples: 1000,
            bootstrap_seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopicsConfig {
    pub k: usize,
    /// Defaults to `50 / k`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
    pub top_terms: usize,
    pub granularity: Granularity,
}

impl Default for TopicsConfig {
    fn default() -> Self {
        let lda = LdaParams::default();
        Self {
            k: lda.topics,
            alpha: None,
            beta: lda.beta,
            iterations: lda.iterations,
            seed: lda.seed,
            top_terms: 10,
            granularity: Granularity::Pool,
        }
    }
}

impl TopicsConfig {
    pub fn lda_params(&self) -> LdaParams {
        LdaParams {
            topics: self.k,
            alpha: self.alpha.unwrap_or(50.0 / self.k.max(1) as f64),
            beta: self.beta,
            iterations: self.iterations,
            seed: self.seed,
        }
    }
}

/// Output locations, relative to the config file's directory unless absolute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub battery: PathBuf,
    pub cache: PathBuf,
    pub scores: PathBuf,
    pub findings: PathBuf,
    pub topics: PathBuf,
    pub report: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            battery: "battery.jsonl".into(),
            cache: "cache".into(),
            scores: "scores".into(),
            findings: "findings".into(),
            topics: "topics".into(),
            report: "report".into(),
        }
    }
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            terms: None,
            generation: GenerationConfig::default(),
            sentiment: SentimentConfig::default(),
            analysis: AnalysisConfig::default(),
            topics: TopicsConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl AuditConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text)?;
        if config.schema != SCHEMA_VERSION {
            return Err(ConfigError::Schema(config.schema));
        }
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Replaces every seed (generation, bootstrap, topic model).
    pub fn override_seed(&mut self, seed: u64) {
        self.generation.params.seed = seed;
        self.analysis.bootstrap_seed = seed;
        self.topics.seed = seed;
    }

    /// Checks every stage's preconditions up front.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.schema != SCHEMA_VERSION {
            return Err(ConfigError::Schema(self.schema));
        }
        let registry = load_registry(self.terms.as_ref())?;

        let g = &self.generation;
        g.params
            .validate()
            .map_err(|m| ConfigError::Invalid(format!("generation.params: {m}")))?;
        let mut ids = std::collections::BTreeSet::new();
        for m in &g.models {
            m.validate()
                .map_err(|e| ConfigError::Invalid(format!("generation.models: {e}")))?;
            if m.model_id == POOLED_ID {
                return invalid(format!("model id `{POOLED_ID}` is reserved"));
            }
            if !ids.insert(m.model_id.as_str()) {
                return invalid(format!("duplicate model id `{}`", m.model_id));
            }
        }
        if g.concurrency == 0 {
            return invalid("generation.concurrency must be at least 1".into());
        }
        if g.max_sentences == 0 {
            return invalid("generation.max_sentences must be at least 1".into());
        }
        if g.timeout_secs == 0 {
            return invalid("generation.timeout_secs must be at least 1".into());
        }
        if g.stub.injections.keys().any(|k| k.trim().is_empty()) {
            return invalid("generation.stub.injections has an empty marker".into());
        }

        let a = &self.analysis;
        if !(a.alpha_level > 0.0 && a.alpha_level < 1.0) {
            return invalid("analysis.alpha_level must lie in (0, 1)".into());
        }
        if a.high_low_q == 0 || 2 * a.high_low_q > registry.battery_size() {
            return invalid(format!(
                "analysis.high_low_q = {} needs 1 <= q and 2q <= {} prompts",
                a.high_low_q,
                registry.battery_size()
            ));
        }
        if a.bootstrap_resamples < 2 {
            return invalid("analysis.bootstrap_resamples must be at least 2".into());
        }
        if g.params.n_completions < 2 {
            return invalid(
                "generation.params.n_completions must be at least 2 for group tests".into(),
            );
        }

        self.topics
            .lda_params()
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("topics: {e}")))?;
        if self.topics.top_terms == 0 {
            return invalid("topics.top_terms must be at least 1".into());
        }
        Ok(())
    }

    /// The config with defaults made explicit, as canonical JSON.
    pub fn canonical_json(&self) -> String {
        let mut effective = self.clone();
        if effective.terms.is_none() {
            effective.terms = Some(TermsConfig::builtin());
        }
        super::canonical_json(&effective)
    }

    /// SHA-256 of [`Self::canonical_json`], hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}
