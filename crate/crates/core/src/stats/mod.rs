//! Group aggregation, bias tests against the baseline and interaction
//! residuals for intersectional prompts.

mod findings;
mod groups;
mod inference;

use thiserror::Error;

pub use findings::{
    bias_findings, interaction_residuals, rank_prompts, BiasFinding, BootstrapConfig,
    InteractionResidual, PromptPools,
};
pub use groups::{aggregate, GroupKey, GroupSummary, Level, ScoreGroup};
pub use inference::{
    cohens_d, holm_correct, mean, sample_variance, t_two_sided_p, welch_test, WelchResult,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} samples per group, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("not testable: {0}")]
    NonTestable(&'static str),
    #[error("p-value {0} outside [0, 1]")]
    PValueOutOfRange(f64),
    #[error("scores reference prompt ids missing from the battery: {0:?}")]
    OrphanPrompts(Vec<String>),
    #[error("baseline group `{0}` is missing")]
    MissingBaseline(String),
    #[error("baseline group `{key}` has {n} samples; at least 2 are required")]
    SmallBaseline { key: String, n: usize },
    #[error("group `{group}` needs constituent group `{missing}`")]
    MissingConstituent { group: String, missing: String },
    #[error("q = {q} is invalid for {groups} prompt groups (need 1 <= q and 2q <= groups)")]
    InvalidQ { q: usize, groups: usize },
}
