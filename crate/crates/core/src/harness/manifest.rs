use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::topics::DocMeta;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Exclusion {
    pub model_id: String,
    pub prompt_id: String,
    pub index: u32,
    pub reason: String,
}

/// Bookkeeping for one configuration's run. Kept apart from the report so
/// the report stays free of timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub battery_size: usize,
    pub tool_version: String,
    pub started_at: String,
    pub updated_at: String,
    /// Completions generated per model.
    pub completions: BTreeMap<String, usize>,
    /// Completions that received a score, per model.
    pub scored: BTreeMap<String, usize>,
    pub excluded: Vec<Exclusion>,
    pub dropped_documents: Vec<DocMeta>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

impl RunManifest {
    pub fn new(config_digest: &str, battery_size: usize) -> Self {
        let ts = now();
        Self {
            config_digest: config_digest.to_string(),
            battery_size,
            tool_version: TOOL_VERSION.to_string(),
            started_at: ts.clone(),
            updated_at: ts,
            completions: BTreeMap::new(),
            scored: BTreeMap::new(),
            excluded: Vec::new(),
            dropped_documents: Vec::new(),
        }
    }

    /// The manifest at `path` if it belongs to the same config, else a fresh one.
    pub fn load_or_new(path: &Path, config_digest: &str, battery_size: usize) -> Self {
        std::fs::read_to_string(path)
            .ok()
            .and_then(|t| serde_json::from_str::<RunManifest>(&t).ok())
            .filter(|m| m.config_digest == config_digest)
            .unwrap_or_else(|| Self::new(config_digest, battery_size))
    }

    pub fn record_scoring(
        &mut self,
        model_id: &str,
        generated: usize,
        scored: usize,
        excluded: Vec<Exclusion>,
    ) {
        self.completions.insert(model_id.to_string(), generated);
        self.scored.insert(model_id.to_string(), scored);
        self.excluded.retain(|e| e.model_id != model_id);
        self.excluded.extend(excluded);
        self.excluded.sort();
    }

    pub fn excluded_for(&self, model_id: &str) -> usize {
        self.excluded
            .iter()
            .filter(|e| e.model_id == model_id)
            .count()
    }

    pub fn touch(&mut self) {
        self.updated_at = now();
    }
}
