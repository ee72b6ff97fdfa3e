#![allow(dead_code)]

use std::fs;
use std::path::Path;

use isect_core::battery::{PromptSpec, TermEntry, TermRegistry, TermsConfig};
use isect_core::generation::{InjectionTable, ModelSpec};
use isect_core::harness::AuditConfig;
use proptest::prelude::*;

/// Negative continuations planted on one marker surface.
pub const NEGATIVE_TEMPLATES: &[&str] = &[
    " was arrested by the police after the attack.",
    " was killed in a violent attack.",
    " was attacked and arrested by police.",
    " was accused of terrorism and arrested.",
    " was arrested for murder.",
    " killed a police officer.",
];

/// Injected tokens a topic list may surface (stopword-filtered, >= 3 chars).
pub const INJECTED_TOKENS: &[&str] = &[
    "arrested",
    "police",
    "attack",
    "killed",
    "violent",
    "attacked",
    "accused",
    "terrorism",
    "murder",
    "officer",
];

pub fn injections(marker: &str) -> InjectionTable {
    let mut table = InjectionTable::new();
    table.insert(
        marker.to_string(),
        NEGATIVE_TEMPLATES.iter().map(|s| s.to_string()).collect(),
    );
    table
}

/// Two stub models, defaults elsewhere, fast retries.
pub fn stub_config(marker: Option<&str>) -> AuditConfig {
    let mut c = AuditConfig::default();
    c.generation.models = vec![ModelSpec::stub("stub-a"), ModelSpec::stub("stub-b")];
    c.generation.initial_backoff_ms = 1;
    if let Some(m) = marker {
        c.generation.stub.injections = injections(m);
    }
    c
}

pub fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn surface(word: &str, tag: char, i: usize) -> String {
    // the tag and index keep surfaces unique within and across categories
    format!("{word}{tag}{}", (b'a' + i as u8) as char)
}

/// Random registries: 1-5 nouns, 0-6 religions, 0-9 disabilities with mixed
/// realizations, some multi-word and some vowel-initial surfaces.
pub fn registry_strategy() -> impl Strategy<Value = TermsConfig> {
    let word = "[a-z]{1,7}";
    (
        prop::collection::vec(word, 1..=5),
        prop::collection::vec(word, 0..=6),
        prop::collection::vec((word, prop::option::of(word), any::<bool>()), 0..=9),
    )
        .prop_map(|(nouns, religions, disabilities)| TermsConfig {
            nouns: nouns
                .iter()
                .enumerate()
                .map(|(i, w)| TermEntry::new(&format!("n{i}"), &surface(w, 'n', i), None))
                .collect(),
            religions: religions
                .iter()
                .enumerate()
                .map(|(i, w)| TermEntry::new(&format!("r{i}"), &surface(w, 'r', i), None))
                .collect(),
            disabilities: disabilities
                .iter()
                .enumerate()
                .map(|(i, (w, second, attributive))| {
                    let s = match second {
                        Some(x) if !attributive => format!("{w} {}", surface(x, 'd', i)),
                        _ => surface(w, 'd', i),
                    };
                    let realization = if *attributive {
                        "attributive"
                    } else {
                        "postmodifier"
                    };
                    TermEntry::new(&format!("d{i}"), &s, Some(realization))
                })
                .collect(),
            baseline_noun: None,
        })
}

fn has_words(text: &str, phrase: &str) -> bool {
    let words = |s: &str| -> Vec<String> {
        s.split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect()
    };
    let (t, p) = (words(text), words(phrase));
    !p.is_empty() && t.windows(p.len()).any(|w| w == p.as_slice())
}

/// Prompts where a religion or disability surface appears without the
/// prompt's noun surface.
pub fn unbound_prompts<'a>(
    registry: &TermRegistry,
    prompts: &'a [PromptSpec],
) -> Vec<&'a PromptSpec> {
    prompts
        .iter()
        .filter(|p| {
            let noun = registry
                .nouns()
                .iter()
                .find(|n| n.id == p.signature.noun)
                .expect("prompt noun is registered");
            let marker = registry
                .religions()
                .iter()
                .chain(registry.disabilities())
                .any(|m| has_words(&p.text, &m.surface));
            marker && !has_words(&p.text, &noun.surface)
        })
        .collect()
}
