//! End-to-end audit: battery, generate, score, analyze, topics, report.
//!
//! Stages talk to each other only through files under the configured
//! paths, so any stage can be re-run on its own and any intermediate
//! directory can be deleted and regenerated.

mod config;
mod manifest;
mod report;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::battery::{build_battery, load_registry, Battery, Category};
use crate::generation::{
    generate, load_completions, BackendKind, CacheError, CompletionBackend, CompletionCache,
    GenerateOptions, GenerationError, HttpBackend, ModelSpec, RetryPolicy, StubBackend,
};
use crate::sentiment::{score_completion, Lexicon, LexiconError, ScoreRecord};
use crate::stats::{
    aggregate, bias_findings, interaction_residuals, rank_prompts, BiasFinding, BootstrapConfig,
    GroupKey, GroupSummary, InteractionResidual, Level, StatsError,
};
use crate::topics::{
    topics_for_pools, DocMeta, Granularity, Pool, PoolTopics, Stopwords, TopicsError,
    TopicsSettings,
};

pub use config::{
    AnalysisConfig, AuditConfig, ConfigError, Correction, GenerationConfig, PathsConfig,
    SentimentConfig, StubConfig, TopicsConfig, POOLED_ID, SCHEMA_VERSION,
};
pub use manifest::{Exclusion, RunManifest, TOOL_VERSION};
pub use report::{
    emit_report, AuditReport, ManifestRef, PoolPrompt, PromptPoolListing, ReportFormat,
};

pub const MANIFEST_FILE: &str = "manifest.json";
const STAMP_FILE: &str = ".stamp";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Battery,
    Generate,
    Score,
    Analyze,
    Topics,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Battery => "battery",
            Stage::Generate => "generate",
            Stage::Score => "score",
            Stage::Analyze => "analyze",
            Stage::Topics => "topics",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("lexicon: {0}")]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Topics(#[from] TopicsError),
    #[error("{0}")]
    Missing(String),
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("invalid config: {0}")]
    Config(#[from] ConfigError),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: StageError,
    },
    #[error("unknown report format `{0}` (expected json or markdown)")]
    UnknownFormat(String),
}

impl AuditError {
    /// 2 for a backend that failed after retries, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            AuditError::Stage {
                source: StageError::Generation(GenerationError::Backend { .. }),
                ..
            } => 2,
            _ => 1,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            AuditError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, AuditError>;
}

impl<T, E: Into<StageError>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, AuditError> {
        self.map_err(|e| AuditError::Stage {
            stage,
            source: e.into(),
        })
    }
}

fn require_files(stage: Stage, paths: &[PathBuf], producer: &str) -> Result<(), AuditError> {
    match paths.iter().find(|p| !p.exists()) {
        Some(p) => Err(missing(
            stage,
            format!("{} not found; run {producer} first", p.display()),
        )),
        None => Ok(()),
    }
}

fn missing(stage: Stage, message: String) -> AuditError {
    AuditError::Stage {
        stage,
        source: StageError::Missing(message),
    }
}

fn sort_value(v: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            let sorted: std::collections::BTreeMap<String, Value> =
                map.into_iter().map(|(k, v)| (k, sort_value(v))).collect();
            Value::Object(sorted.into_iter().collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sort_value).collect()),
        other => other,
    }
}

/// Pretty JSON with object keys sorted at every level and a trailing newline.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("value serializes to JSON");
    let mut s = serde_json::to_string_pretty(&sort_value(v)).expect("JSON value serializes");
    s.push('\n');
    s
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> StageError + '_ {
    move |source| StageError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), StageError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StageError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| StageError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StageError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|source| StageError::Json {
                path: path.to_path_buf(),
                source,
            })
        })
        .collect()
}

fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Contents of `findings/<model_id>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFindings {
    pub model_id: String,
    pub signature_summaries: Vec<GroupSummary>,
    pub rollup_summaries: Vec<GroupSummary>,
    /// Every signature group against the unmarked baseline, one Holm family.
    pub signature_findings: Vec<BiasFinding>,
    /// Every marker rollup against the unmarked baseline, a second family.
    pub rollup_findings: Vec<BiasFinding>,
    pub interactions: Vec<InteractionResidual>,
}

impl ModelFindings {
    pub fn rollup(&self, category: Category, id: &str) -> Option<&BiasFinding> {
        let key = GroupKey::marker(category, id);
        self.rollup_findings.iter().find(|f| f.group_key == key)
    }

    pub fn summary(&self, key: &GroupKey) -> Option<&GroupSummary> {
        self.signature_summaries
            .iter()
            .chain(&self.rollup_summaries)
            .find(|s| &s.group_key == key)
    }

    pub fn any_significant(&self) -> bool {
        self.signature_findings
            .iter()
            .chain(&self.rollup_findings)
            .any(|f| f.significant)
    }
}

/// Group statistics for one set of completion scores.
pub fn analyze_scores(
    model_id: &str,
    scores: &[ScoreRecord],
    battery: &Battery,
    analysis: &AnalysisConfig,
) -> Result<ModelFindings, StatsError> {
    let baseline = battery.baseline();
    let baseline_key = GroupKey::Signature(baseline.clone());
    let signatures = aggregate(scores, battery, Level::Signature)?;
    let rollups = aggregate(scores, battery, Level::Category)?;

    let signature_findings = bias_findings(&signatures, &baseline_key, analysis.alpha_level)?;
    let mut rollup_family = rollups.clone();
    if let Some(base) = signatures.iter().find(|g| g.key == baseline_key) {
        rollup_family.push(base.clone());
    }
    let rollup_findings = bias_findings(&rollup_family, &baseline_key, analysis.alpha_level)?;
    let interactions = interaction_residuals(
        &signatures,
        &baseline,
        &BootstrapConfig {
            resamples: analysis.bootstrap_resamples,
            seed: analysis.bootstrap_seed,
        },
    )?;
    Ok(ModelFindings {
        model_id: model_id.to_string(),
        signature_summaries: signatures.iter().map(|g| g.summary()).collect(),
        rollup_summaries: rollups.iter().map(|g| g.summary()).collect(),
        signature_findings,
        rollup_findings,
        interactions,
    })
}

/// A validated config bound to the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Audit {
    config: AuditConfig,
    root: PathBuf,
    battery: Battery,
    digest: String,
}

impl Audit {
    pub fn new(config: AuditConfig, root: impl Into<PathBuf>) -> Result<Self, AuditError> {
        config.validate()?;
        let registry = load_registry(config.terms.as_ref()).map_err(ConfigError::from)?;
        let battery = build_battery(&registry).map_err(ConfigError::from)?;
        let digest = config.digest();
        Ok(Self {
            config,
            root: root.into(),
            battery,
            digest,
        })
    }

    /// Loads a config file; relative paths resolve against its directory.
    pub fn from_path(path: &Path, seed: Option<u64>) -> Result<Self, AuditError> {
        let mut config = AuditConfig::from_path(path)?;
        if let Some(seed) = seed {
            config.override_seed(seed);
        }
        let root = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        Self::new(config, root)
    }

    pub fn config(&self) -> &AuditConfig {
        &self.config
    }

    pub fn battery(&self) -> &Battery {
        &self.battery
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }

    pub fn battery_path(&self) -> PathBuf {
        self.resolve(&self.config.paths.battery)
    }

    pub fn cache(&self) -> CompletionCache {
        CompletionCache::new(self.resolve(&self.config.paths.cache))
    }

    pub fn scores_dir(&self) -> PathBuf {
        self.resolve(&self.config.paths.scores)
    }

    pub fn scores_path(&self, model_id: &str) -> PathBuf {
        self.scores_dir().join(format!("{model_id}.jsonl"))
    }

    fn exclusions_path(&self, model_id: &str) -> PathBuf {
        self.scores_dir().join(format!("{model_id}.excluded.jsonl"))
    }

    pub fn findings_dir(&self) -> PathBuf {
        self.resolve(&self.config.paths.findings)
    }

    pub fn findings_path(&self, id: &str) -> PathBuf {
        self.findings_dir().join(format!("{id}.json"))
    }

    pub fn topics_dir(&self) -> PathBuf {
        self.resolve(&self.config.paths.topics)
    }

    fn topics_path(&self, pool: Pool, prompt_id: Option<&str>) -> PathBuf {
        match prompt_id {
            None => self.topics_dir().join(format!("{pool}.json")),
            Some(id) => self.topics_dir().join(format!("{pool}-{id}.json")),
        }
    }

    pub fn report_dir(&self) -> PathBuf {
        self.resolve(&self.config.paths.report)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.report_dir().join(MANIFEST_FILE)
    }

    fn model_ids(&self) -> Vec<&str> {
        self.config
            .generation
            .models
            .iter()
            .map(|m| m.model_id.as_str())
            .collect()
    }

    fn require_models(&self, stage: Stage) -> Result<(), AuditError> {
        if self.config.generation.models.is_empty() {
            return Err(missing(
                stage,
                "config lists no models under generation.models".into(),
            ));
        }
        Ok(())
    }

    /// Stage key: the config digest, the stage and the bytes of every input.
    fn stamp_key(&self, stage: Stage, inputs: &[PathBuf]) -> Result<String, StageError> {
        let mut h = Sha256::new();
        h.update(self.digest.as_bytes());
        h.update(stage.to_string().as_bytes());
        for path in inputs {
            let bytes = fs::read(path).map_err(io_err(path))?;
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
        Ok(hex::encode(h.finalize()))
    }

    fn is_fresh(dir: &Path, key: &str, outputs: &[PathBuf]) -> bool {
        fs::read_to_string(dir.join(STAMP_FILE)).is_ok_and(|s| s.trim() == key)
            && outputs.iter().all(|p| p.exists())
    }

    fn write_stamp(dir: &Path, key: &str) -> Result<(), StageError> {
        write_file(&dir.join(STAMP_FILE), &format!("{key}\n"))
    }

    pub fn write_battery(&self) -> Result<PathBuf, AuditError> {
        let path = self.battery_path();
        write_file(&path, &self.battery.to_jsonl()).at(Stage::Battery)?;
        Ok(path)
    }

    pub fn generate_options(&self) -> GenerateOptions {
        let g = &self.config.generation;
        GenerateOptions {
            concurrency: g.concurrency,
            retry: RetryPolicy {
                retries: g.retries,
                initial_backoff: Duration::from_millis(g.initial_backoff_ms),
            },
            max_sentences: g.max_sentences,
        }
    }

    pub fn backend_for(&self, model: &ModelSpec) -> Box<dyn CompletionBackend> {
        match model.backend {
            BackendKind::Stub => Box::new(StubBackend::new(
                &model.model_id,
                self.config.generation.stub.injections.clone(),
            )),
            BackendKind::Http => Box::new(HttpBackend::new(
                model.endpoint.as_deref().unwrap_or_default(),
                &model.model_id,
                Duration::from_secs(self.config.generation.timeout_secs),
            )),
        }
    }

    /// Fills the cache for one model with its configured backend.
    pub fn generate_model(&self, model: &ModelSpec) -> Result<usize, AuditError> {
        self.generate_with(model, self.backend_for(model).as_ref())
    }

    /// Fills the cache for one model with any backend. Returns the number
    /// of completions now cached for the battery.
    pub fn generate_with(
        &self,
        model: &ModelSpec,
        backend: &dyn CompletionBackend,
    ) -> Result<usize, AuditError> {
        let out = generate(
            model,
            backend,
            self.battery.prompts(),
            &self.config.generation.params,
            &self.cache(),
            &self.generate_options(),
        )
        .at(Stage::Generate)?;
        Ok(out.len())
    }

    pub fn generate(&self) -> Result<(), AuditError> {
        self.require_models(Stage::Generate)?;
        for model in &self.config.generation.models {
            self.generate_model(model)?;
        }
        Ok(())
    }

    fn lexicon(&self) -> Result<Lexicon, StageError> {
        Ok(match &self.config.sentiment.lexicon {
            Some(p) => Lexicon::from_path(&self.resolve(p))?,
            None => Lexicon::builtin(),
        })
    }

    /// Scores every configured model's cached completions.
    pub fn score(&self) -> Result<(), AuditError> {
        self.require_models(Stage::Score)?;
        let stage = Stage::Score;
        let cache = self.cache();
        let mut inputs: Vec<PathBuf> = self.model_ids().iter().map(|m| cache.path(m)).collect();
        if let Some(p) = &self.config.sentiment.lexicon {
            inputs.push(self.resolve(p));
        }
        require_files(stage, &inputs, "generate")?;
        let key = self.stamp_key(Stage::Score, &inputs).at(stage)?;
        let outputs: Vec<PathBuf> = self
            .model_ids()
            .iter()
            .flat_map(|m| [self.scores_path(m), self.exclusions_path(m)])
            .collect();
        let dir = self.scores_dir();
        if Self::is_fresh(&dir, &key, &outputs) {
            log::info!("score: outputs are current");
            return Ok(());
        }
        let lexicon = self.lexicon().at(stage)?;
        for model_id in self.model_ids() {
            self.score_model(model_id, &cache, &lexicon).at(stage)?;
        }
        Self::write_stamp(&dir, &key).at(stage)?;
        self.refresh_manifest().at(stage)?;
        Ok(())
    }

    fn score_model(
        &self,
        model_id: &str,
        cache: &CompletionCache,
        lexicon: &Lexicon,
    ) -> Result<(), StageError> {
        let g = &self.config.generation;
        let completions = load_completions(
            cache,
            model_id,
            self.battery.prompts(),
            g.params.n_completions,
            g.max_sentences,
        )?;
        let expected = self.battery.len() * g.params.n_completions as usize;
        if completions.len() != expected {
            return Err(StageError::Missing(format!(
                "model `{model_id}` has {} of {expected} completions cached; run generate first",
                completions.len()
            )));
        }
        let mut scores = Vec::with_capacity(completions.len());
        let mut excluded = Vec::new();
        for c in &completions {
            match score_completion(&c.sentences, lexicon) {
                Ok(value) => scores.push(ScoreRecord {
                    prompt_id: c.prompt_id.clone(),
                    model_id: c.model_id.clone(),
                    index: c.index,
                    value,
                }),
                Err(e) => excluded.push(Exclusion {
                    model_id: c.model_id.clone(),
                    prompt_id: c.prompt_id.clone(),
                    index: c.index,
                    reason: e.to_string(),
                }),
            }
        }
        log::info!(
            "score: model {model_id}: {} scored, {} excluded",
            scores.len(),
            excluded.len()
        );
        write_file(&self.scores_path(model_id), &to_jsonl(&scores))?;
        write_file(&self.exclusions_path(model_id), &to_jsonl(&excluded))
    }

    /// Writes `findings/<model_id>.json` per model and `findings/pooled.json`.
    pub fn analyze(&self) -> Result<(), AuditError> {
        self.require_models(Stage::Analyze)?;
        let stage = Stage::Analyze;
        let inputs: Vec<PathBuf> = self
            .model_ids()
            .iter()
            .map(|m| self.scores_path(m))
            .collect();
        require_files(stage, &inputs, "score")?;
        let key = self.stamp_key(Stage::Analyze, &inputs).at(stage)?;
        let mut outputs: Vec<PathBuf> = self
            .model_ids()
            .iter()
            .map(|m| self.findings_path(m))
            .collect();
        outputs.push(self.findings_path(POOLED_ID));
        let dir = self.findings_dir();
        if Self::is_fresh(&dir, &key, &outputs) {
            log::info!("analyze: outputs are current");
            return Ok(());
        }
        let mut pooled = Vec::new();
        for model_id in self.model_ids() {
            let scores: Vec<ScoreRecord> = read_jsonl(&self.scores_path(model_id)).at(stage)?;
            let findings = analyze_scores(model_id, &scores, &self.battery, &self.config.analysis)
                .at(stage)?;
            write_file(&self.findings_path(model_id), &canonical_json(&findings)).at(stage)?;
            pooled.extend(scores);
        }
        let findings =
            analyze_scores(POOLED_ID, &pooled, &self.battery, &self.config.analysis).at(stage)?;
        write_file(&self.findings_path(POOLED_ID), &canonical_json(&findings)).at(stage)?;
        Self::write_stamp(&dir, &key).at(stage)
    }

    fn pool_listing(&self, pooled: &ModelFindings) -> Result<PromptPoolListing, StageError> {
        let pools = rank_prompts(&pooled.signature_summaries, self.config.analysis.high_low_q)?;
        let entries = |keys: &[GroupKey]| -> Result<Vec<PoolPrompt>, StageError> {
            keys.iter()
                .map(|key| {
                    let prompt = key
                        .signature()
                        .and_then(|s| self.battery.by_signature(s))
                        .ok_or_else(|| {
                            StageError::Missing(format!("no prompt for group `{key}`"))
                        })?;
                    let mean = pooled
                        .summary(key)
                        .ok_or_else(|| {
                            StageError::Missing(format!("no summary for group `{key}`"))
                        })?
                        .mean;
                    Ok(PoolPrompt {
                        prompt_id: prompt.prompt_id.clone(),
                        text: prompt.text.clone(),
                        group_key: key.clone(),
                        mean,
                    })
                })
                .collect()
        };
        Ok(PromptPoolListing {
            high: entries(&pools.high)?,
            low: entries(&pools.low)?,
        })
    }

    fn topic_outputs(&self, listing: &PromptPoolListing) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for (pool, prompts) in [(Pool::High, &listing.high), (Pool::Low, &listing.low)] {
            match self.config.topics.granularity {
                Granularity::Pool => out.push(self.topics_path(pool, None)),
                Granularity::Prompt => out.extend(
                    prompts
                        .iter()
                        .map(|p| self.topics_path(pool, Some(&p.prompt_id))),
                ),
            }
        }
        out
    }

    /// Fits topic models to the completions of the high and low pools.
    pub fn topics(&self) -> Result<Vec<PoolTopics>, AuditError> {
        self.require_models(Stage::Topics)?;
        let stage = Stage::Topics;
        let pooled_path = self.findings_path(POOLED_ID);
        require_files(stage, std::slice::from_ref(&pooled_path), "analyze")?;
        let cache = self.cache();
        let mut inputs = vec![pooled_path.clone()];
        inputs.extend(self.model_ids().iter().map(|m| cache.path(m)));
        let key = self.stamp_key(Stage::Topics, &inputs).at(stage)?;
        let pooled: ModelFindings = read_json(&pooled_path).at(stage)?;
        let listing = self.pool_listing(&pooled).at(stage)?;
        let outputs = self.topic_outputs(&listing);
        let dir = self.topics_dir();
        if Self::is_fresh(&dir, &key, &outputs) {
            log::info!("topics: outputs are current");
            return outputs
                .iter()
                .map(|p| read_json(p))
                .collect::<Result<_, _>>()
                .at(stage);
        }

        let pool_ids: Vec<&str> = listing
            .high
            .iter()
            .chain(&listing.low)
            .map(|p| p.prompt_id.as_str())
            .collect();
        let prompts: Vec<_> = self
            .battery
            .prompts()
            .iter()
            .filter(|p| pool_ids.contains(&p.prompt_id.as_str()))
            .cloned()
            .collect();
        let g = &self.config.generation;
        let mut completions = Vec::new();
        for model_id in self.model_ids() {
            completions.extend(
                load_completions(
                    &cache,
                    model_id,
                    &prompts,
                    g.params.n_completions,
                    g.max_sentences,
                )
                .at(stage)?,
            );
        }
        let ids = |ps: &[PoolPrompt]| ps.iter().map(|p| p.prompt_id.clone()).collect::<Vec<_>>();
        let settings = TopicsSettings {
            lda: self.config.topics.lda_params(),
            top_terms: self.config.topics.top_terms,
            granularity: self.config.topics.granularity,
        };
        let fragment = topics_for_pools(
            &ids(&listing.high),
            &ids(&listing.low),
            &completions,
            &settings,
            &Stopwords::builtin(),
        )
        .at(stage)?;
        for pool in &fragment.pools {
            let path = self.topics_path(pool.pool, pool.prompt_id.as_deref());
            write_file(&path, &canonical_json(pool)).at(stage)?;
        }
        write_file(&dir.join("dropped.jsonl"), &to_jsonl(&fragment.dropped)).at(stage)?;
        Self::write_stamp(&dir, &key).at(stage)?;
        self.refresh_manifest().at(stage)?;
        Ok(fragment.pools)
    }

    /// Assembles `report/report.json` and `report/report.md`.
    pub fn report(&self) -> Result<AuditReport, AuditError> {
        self.require_models(Stage::Report)?;
        let stage = Stage::Report;
        let pooled_path = self.findings_path(POOLED_ID);
        let mut findings_inputs: Vec<PathBuf> = self
            .model_ids()
            .iter()
            .map(|m| self.findings_path(m))
            .collect();
        findings_inputs.push(pooled_path.clone());
        require_files(stage, &findings_inputs, "analyze")?;
        let pooled: ModelFindings = read_json(&pooled_path).at(stage)?;
        let listing = self.pool_listing(&pooled).at(stage)?;
        let topic_paths = self.topic_outputs(&listing);
        require_files(stage, &topic_paths, "topics")?;
        let mut inputs = findings_inputs;
        inputs.extend(topic_paths.iter().cloned());
        let key = self.stamp_key(Stage::Report, &inputs).at(stage)?;
        let dir = self.report_dir();
        let json_path = dir.join("report.json");
        let md_path = dir.join("report.md");
        self.refresh_manifest().at(stage)?;
        if Self::is_fresh(&dir, &key, &[json_path.clone(), md_path.clone()]) {
            log::info!("report: outputs are current");
            return read_json(&json_path).at(stage);
        }

        let models = self
            .model_ids()
            .iter()
            .map(|m| read_json::<ModelFindings>(&self.findings_path(m)))
            .collect::<Result<Vec<_>, _>>()
            .at(stage)?;
        let topics = topic_paths
            .iter()
            .map(|p| read_json::<PoolTopics>(p))
            .collect::<Result<Vec<_>, _>>()
            .at(stage)?;
        let report = AuditReport {
            manifest: ManifestRef {
                path: MANIFEST_FILE.to_string(),
                config_digest: self.digest.clone(),
            },
            battery_size: self.battery.len(),
            baseline: GroupKey::Signature(self.battery.baseline()),
            alpha_level: self.config.analysis.alpha_level,
            correction: self.config.analysis.correction,
            models,
            pooled,
            pools: listing,
            topics,
        };
        write_file(&json_path, &emit_report(&report, ReportFormat::Json)).at(stage)?;
        write_file(&md_path, &emit_report(&report, ReportFormat::Markdown)).at(stage)?;
        Self::write_stamp(&dir, &key).at(stage)?;
        Ok(report)
    }

    /// Recomputes the manifest's counts from the files on disk.
    pub fn refresh_manifest(&self) -> Result<RunManifest, StageError> {
        let path = self.manifest_path();
        let mut manifest = RunManifest::load_or_new(&path, &self.digest, self.battery.len());
        let cache = self.cache();
        let g = &self.config.generation;
        manifest.completions.clear();
        manifest.scored.clear();
        manifest.excluded.clear();
        for model_id in self.model_ids() {
            let generated = load_completions(
                &cache,
                model_id,
                self.battery.prompts(),
                g.params.n_completions,
                g.max_sentences,
            )?
            .len();
            manifest.completions.insert(model_id.to_string(), generated);
            if self.scores_path(model_id).exists() {
                let scored = read_jsonl::<ScoreRecord>(&self.scores_path(model_id))?.len();
                let excluded: Vec<Exclusion> = match self.exclusions_path(model_id) {
                    p if p.exists() => read_jsonl(&p)?,
                    _ => Vec::new(),
                };
                manifest.record_scoring(model_id, generated, scored, excluded);
            }
        }
        let dropped = self.topics_dir().join("dropped.jsonl");
        manifest.dropped_documents = if dropped.exists() {
            read_jsonl::<DocMeta>(&dropped)?
        } else {
            Vec::new()
        };
        manifest.touch();
        write_file(&path, &canonical_json(&manifest))?;
        Ok(manifest)
    }

    /// Every stage in order. Stages whose outputs match their inputs are skipped.
    pub fn run(&self) -> Result<AuditReport, AuditError> {
        self.write_battery()?;
        self.generate()?;
        self.score()?;
        self.analyze()?;
        self.topics()?;
        self.report()
    }
}

/// Runs the whole audit with paths resolved against `root`.
pub fn run_audit(config: &AuditConfig, root: &Path) -> Result<AuditReport, AuditError> {
    Audit::new(config.clone(), root)?.run()
}
