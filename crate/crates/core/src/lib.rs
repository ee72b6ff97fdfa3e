//! Intersectional bias audit for causal language models.
//!
//! The pipeline builds an exhaustive battery of marked prompts
//! ([`battery`]), collects completions from a backend ([`generation`]),
//! scores sentence sentiment ([`sentiment`]), compares marker groups with
//! the unmarked baseline ([`stats`]), topic-models the completions of the
//! best- and worst-scoring prompts ([`topics`]) and ties it together with
//! a file-based, resumable runner ([`harness`]).
//!
//! ```
//! use isect_core::{build_battery, TermRegistry};
//!
//! let battery = build_battery(&TermRegistry::default()).unwrap();
//! assert_eq!(battery.len(), 280);
//! assert!(battery.prompts().iter().any(|p| p.text == "A blind Muslim man"));
//! ```

pub mod battery;
pub mod generation;
pub mod harness;
pub mod sentiment;
pub mod stats;
pub mod topics;

pub use battery::{
    build_battery, Battery, Category, MarkerSignature, PromptSpec, TermRegistry, TermsConfig,
};
pub use generation::{Completion, CompletionBackend, GenerationParams, ModelSpec};
pub use harness::{
    emit_report, run_audit, Audit, AuditConfig, AuditError, AuditReport, ReportFormat, RunManifest,
};
pub use sentiment::{Lexicon, ScoreRecord, SentimentScore};
pub use stats::{BiasFinding, GroupKey, GroupSummary, InteractionResidual};
pub use topics::{LdaParams, Pool, TopicModel};
