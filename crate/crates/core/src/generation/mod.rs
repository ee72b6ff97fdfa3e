//! Completion collection: backends, sentence extraction and the resumable
//! per-model cache.

mod cache;
mod http;
mod sentences;
mod stub;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::PromptSpec;

pub use cache::{CacheError, CacheRecord, CompletionCache};
pub use http::{
    http_generate, parse_response, strip_echo, CompletionRequest, HttpBackend, DEFAULT_TIMEOUT,
    TOKEN_ENV,
};
pub use sentences::{split_sentences, DEFAULT_MAX_SENTENCES};
pub use stub::{stub_generate, InjectionTable, StubBackend};

/// Sampling parameters shared by every prompt of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationParams {
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
    pub n_completions: u32,
    pub seed: u64,
    pub stop_sequences: Vec<String>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            max_tokens: 50,
            temperature: 1.0,
            top_p: 0.9,
            n_completions: 10,
            seed: 42,
            stop_sequences: Vec::new(),
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_tokens == 0 {
            return Err("max_tokens must be positive".into());
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err("temperature must be a non-negative number".into());
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err("top_p must lie in (0, 1]".into());
        }
        if self.n_completions == 0 {
            return Err("n_completions must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Stub,
    Http,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stub" => Ok(BackendKind::Stub),
            "http" => Ok(BackendKind::Http),
            other => Err(format!("unknown backend `{other}` (expected stub or http)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub model_id: String,
    pub backend: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display_name: Option<String>,
}

impl ModelSpec {
    pub fn stub(model_id: &str) -> Self {
        Self {
            model_id: model_id.to_string(),
            backend: BackendKind::Stub,
            endpoint: None,
            display_name: None,
        }
    }

    pub fn http(model_id: &str, endpoint: &str) -> Self {
        Self {
            model_id: model_id.to_string(),
            backend: BackendKind::Http,
            endpoint: Some(endpoint.to_string()),
            display_name: None,
        }
    }

    pub fn display_name(&self) -> &str {
        self.display_name.as_deref().unwrap_or(&self.model_id)
    }

    /// Model ids name cache files, so they are restricted to a safe charset.
    pub fn validate(&self) -> Result<(), String> {
        let id = &self.model_id;
        let ok = !id.is_empty()
            && !id.starts_with('.')
            && id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
        if !ok {
            return Err(format!(
                "model id `{id}` must be non-empty ascii letters, digits, `.`, `_` or `-`"
            ));
        }
        if self.backend == BackendKind::Http && self.endpoint.as_deref().unwrap_or("").is_empty() {
            return Err(format!(
                "model `{id}` uses the http backend but has no endpoint"
            ));
        }
        Ok(())
    }
}

/// A cached continuation plus the sentences extracted from prompt + text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub prompt_id: String,
    pub model_id: String,
    pub index: u32,
    pub raw_text: String,
    pub sentences: Vec<String>,
}

impl Completion {
    pub fn from_record(record: CacheRecord, prompt_text: &str, max_sentences: usize) -> Self {
        let sentences = split_sentences(prompt_text, &record.raw_text, max_sentences);
        Self {
            prompt_id: record.prompt_id,
            model_id: record.model_id,
            index: record.index,
            raw_text: record.raw_text,
            sentences,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("http status {0}")]
    Status(u16),
    #[error("malformed response: {0}")]
    Malformed(String),
}

/// Something that turns a prompt into `params.n_completions` continuations.
pub trait CompletionBackend: Sync {
    fn complete(
        &self,
        prompt_text: &str,
        params: &GenerationParams,
    ) -> Result<Vec<String>, BackendError>;
}

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("model `{model_id}`, prompt `{prompt_id}`: {source}")]
    Backend {
        model_id: String,
        prompt_id: String,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("invalid generation settings: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub retries: u32,
    /// Delay before the first retry; doubles each time.
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerateOptions {
    /// Maximum in-flight backend requests.
    pub concurrency: usize,
    pub retry: RetryPolicy,
    pub max_sentences: usize,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            concurrency: 4,
            retry: RetryPolicy::default(),
            max_sentences: DEFAULT_MAX_SENTENCES,
        }
    }
}

fn request_with_retry(
    backend: &dyn CompletionBackend,
    prompt: &PromptSpec,
    params: &GenerationParams,
    retry: &RetryPolicy,
    abort: &AtomicBool,
) -> Result<Vec<String>, BackendError> {
    let mut delay = retry.initial_backoff;
    let mut attempt = 0;
    loop {
        let result = backend.complete(&prompt.text, params).and_then(|texts| {
            if texts.len() < params.n_completions as usize {
                Err(BackendError::Malformed(format!(
                    "expected {} choices, got {}",
                    params.n_completions,
                    texts.len()
                )))
            } else {
                Ok(texts)
            }
        });
        match result {
            Ok(texts) => return Ok(texts),
            Err(e) if attempt >= retry.retries || abort.load(Ordering::SeqCst) => return Err(e),
            Err(e) => {
                log::warn!(
                    "prompt {} attempt {} failed: {e}; retrying in {:?}",
                    prompt.prompt_id,
                    attempt + 1,
                    delay
                );
                thread::sleep(delay);
                delay *= 2;
                attempt += 1;
            }
        }
    }
}

/// Collects `params.n_completions` completions per prompt for one model.
///
/// Prompts already complete in the cache are not requested again. New
/// results are appended as they arrive from up to `options.concurrency`
/// workers; the first failure (after retries) stops the run and names the
/// prompt, leaving everything gathered so far in the cache. On success the
/// cache file is compacted into `(prompt_id, index)` order.
pub fn generate(
    model: &ModelSpec,
    backend: &dyn CompletionBackend,
    prompts: &[PromptSpec],
    params: &GenerationParams,
    cache: &CompletionCache,
    options: &GenerateOptions,
) -> Result<Vec<Completion>, GenerationError> {
    params.validate().map_err(GenerationError::Invalid)?;
    model.validate().map_err(GenerationError::Invalid)?;
    let n = params.n_completions;
    let model_id = model.model_id.as_str();

    let mut have: BTreeMap<String, BTreeSet<u32>> = BTreeMap::new();
    for r in cache.load(model_id)? {
        if r.index < n {
            have.entry(r.prompt_id).or_default().insert(r.index);
        }
    }
    let todo: Vec<&PromptSpec> = prompts
        .iter()
        .filter(|p| have.get(&p.prompt_id).map_or(0, BTreeSet::len) < n as usize)
        .collect();
    log::info!(
        "model {model_id}: {} of {} prompts need completions",
        todo.len(),
        prompts.len()
    );

    if !todo.is_empty() {
        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let workers = options.concurrency.max(1).min(todo.len());
        let mut failure: Option<GenerationError> = None;
        thread::scope(|scope| {
            let (tx, rx) = mpsc::channel();
            for _ in 0..workers {
                let tx = tx.clone();
                let (next, abort, todo) = (&next, &abort, &todo);
                scope.spawn(move || loop {
                    if abort.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(prompt) = todo.get(i) else { break };
                    let result = request_with_retry(backend, prompt, params, &options.retry, abort);
                    if tx.send((*prompt, result)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            for (prompt, result) in rx {
                if failure.is_some() {
                    continue;
                }
                match result {
                    Ok(texts) => {
                        let present = have.get(&prompt.prompt_id);
                        let records: Vec<CacheRecord> = texts
                            .into_iter()
                            .take(n as usize)
                            .enumerate()
                            .map(|(i, t)| (i as u32, t))
                            .filter(|(i, _)| present.is_none_or(|s| !s.contains(i)))
                            .map(|(index, raw_text)| CacheRecord {
                                prompt_id: prompt.prompt_id.clone(),
                                model_id: model_id.to_string(),
                                index,
                                raw_text,
                            })
                            .collect();
                        if let Err(e) = cache.append(model_id, &records) {
                            abort.store(true, Ordering::SeqCst);
                            failure = Some(e.into());
                        }
                    }
                    Err(source) => {
                        abort.store(true, Ordering::SeqCst);
                        failure = Some(GenerationError::Backend {
                            model_id: model_id.to_string(),
                            prompt_id: prompt.prompt_id.clone(),
                            source,
                        });
                    }
                }
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
    }

    let records = cache.compact(model_id)?;
    let by_id: BTreeMap<&str, &PromptSpec> =
        prompts.iter().map(|p| (p.prompt_id.as_str(), p)).collect();
    let mut out: Vec<Completion> = records
        .into_iter()
        .filter(|r| r.index < n)
        .filter_map(|r| {
            let prompt = by_id.get(r.prompt_id.as_str())?;
            Some(Completion::from_record(
                r,
                &prompt.text,
                options.max_sentences,
            ))
        })
        .collect();
    out.sort_by(|a, b| (&a.prompt_id, a.index).cmp(&(&b.prompt_id, b.index)));
    Ok(out)
}

/// Loads one model's cached completions for the given prompts, sorted by
/// `(prompt_id, index)`, without contacting any backend.
pub fn load_completions(
    cache: &CompletionCache,
    model_id: &str,
    prompts: &[PromptSpec],
    n_completions: u32,
    max_sentences: usize,
) -> Result<Vec<Completion>, CacheError> {
    let by_id: BTreeMap<&str, &PromptSpec> =
        prompts.iter().map(|p| (p.prompt_id.as_str(), p)).collect();
    let mut seen = BTreeSet::new();
    let mut out: Vec<Completion> = cache
        .load(model_id)?
        .into_iter()
        .filter(|r| r.index < n_completions && seen.insert((r.prompt_id.clone(), r.index)))
        .filter_map(|r| {
            let prompt = by_id.get(r.prompt_id.as_str())?;
            Some(Completion::from_record(r, &prompt.text, max_sentences))
        })
        .collect();
    out.sort_by(|a, b| (&a.prompt_id, a.index).cmp(&(&b.prompt_id, b.index)));
    Ok(out)
}
