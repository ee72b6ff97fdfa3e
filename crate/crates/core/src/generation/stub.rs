//! Deterministic offline backend.
//!
//! Continuations are drawn from template pools with a stream seeded by
//! `(seed, prompt text, completion index)`. An injection table routes
//! prompts that mention a given marker surface to a chosen pool, which lets
//! tests plant a known bias and check that the pipeline finds it.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{BackendError, CompletionBackend, GenerationParams};

/// Marker surface (matched as whole words, case-insensitively) to
/// continuation templates.
pub type InjectionTable = BTreeMap<String, Vec<String>>;

const NEUTRAL_OPENERS: &[&str] = &[
    " walked to the market in the morning.",
    " works at the local library.",
    " lives in a small town near the coast.",
    " has a good sense of humor.",
    " enjoyed a quiet dinner with friends.",
    " was late for the bus again.",
    " spent the afternoon reading a book.",
    " is a teacher at the school.",
    " was tired after a long day.",
    " likes to cook on weekends.",
    " visited family over the holiday.",
    " felt happy about the new job.",
];

const NEUTRAL_FOLLOWERS: &[&str] = &[
    " The weather was mild.",
    " It was an ordinary day.",
    " Everyone seemed friendly.",
    " The street was busy.",
    " There was a lot to do.",
    " The coffee was warm and nice.",
    " Later the rain stopped.",
    " It was a little boring.",
];

fn stream_seed(seed: u64, prompt_text: &str, index: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(prompt_text.as_bytes());
    h.update(index.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

fn mentions(prompt_text: &str, marker: &str) -> bool {
    let norm = |s: &str| {
        let words: Vec<String> = s.split_whitespace().map(str::to_lowercase).collect();
        format!(" {} ", words.join(" "))
    };
    let marker = norm(marker);
    !marker.trim().is_empty() && norm(prompt_text).contains(&marker)
}

fn truncate(text: &str, params: &GenerationParams) -> String {
    let mut cut = text;
    for stop in params.stop_sequences.iter().filter(|s| !s.is_empty()) {
        if let Some(pos) = cut.find(stop.as_str()) {
            cut = &cut[..pos];
        }
    }
    // keep the leading space so the continuation still joins the prompt
    let mut out = String::new();
    for (i, word) in cut.split_whitespace().enumerate() {
        if i as u32 >= params.max_tokens {
            break;
        }
        out.push(' ');
        out.push_str(word);
    }
    out
}

/// `params.n_completions` continuations for `prompt_text`.
pub fn stub_generate(
    prompt_text: &str,
    params: &GenerationParams,
    seed: u64,
    injections: &InjectionTable,
) -> Vec<String> {
    let injected: Vec<&str> = injections
        .iter()
        .filter(|(marker, _)| mentions(prompt_text, marker))
        .flat_map(|(_, templates)| templates.iter().map(String::as_str))
        .collect();
    (0..params.n_completions)
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, prompt_text, index));
            let text = if injected.is_empty() {
                let a = NEUTRAL_OPENERS[rng.random_range(0..NEUTRAL_OPENERS.len())];
                let b = NEUTRAL_FOLLOWERS[rng.random_range(0..NEUTRAL_FOLLOWERS.len())];
                format!("{a}{b}")
            } else {
                let a = injected[rng.random_range(0..injected.len())];
                let b = injected[rng.random_range(0..injected.len())];
                format!("{a}{b}")
            };
            truncate(&text, params)
        })
        .collect()
}

/// Backend wrapper; each model gets its own stream via `model_id`.
#[derive(Debug, Clone)]
pub struct StubBackend {
    model_id: String,
    injections: InjectionTable,
}

impl StubBackend {
    pub fn new(model_id: &str, injections: InjectionTable) -> Self {
        Self {
            model_id: model_id.to_string(),
            injections,
        }
    }

    fn seed(&self, params: &GenerationParams) -> u64 {
        let mut h = Sha256::new();
        h.update(params.seed.to_le_bytes());
        h.update(self.model_id.as_bytes());
        u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
    }
}

impl CompletionBackend for StubBackend {
    fn complete(
        &self,
        prompt_text: &str,
        params: &GenerationParams,
    ) -> Result<Vec<String>, BackendError> {
        Ok(stub_generate(
            prompt_text,
            params,
            self.seed(params),
            &self.injections,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> InjectionTable {
        let mut t = InjectionTable::new();
        t.insert(
            "blind".into(),
            vec![
                " was attacked and hurt.".into(),
                " was robbed and beaten.".into(),
            ],
        );
        t
    }

    #[test]
    fn deterministic() {
        let p = GenerationParams::default();
        assert_eq!(
            stub_generate("A woman", &p, 7, &table()),
            stub_generate("A woman", &p, 7, &table())
        );
        assert_eq!(stub_generate("A woman", &p, 7, &table()).len(), 10);
        assert_ne!(
            stub_generate("A woman", &p, 7, &table()),
            stub_generate("A woman", &p, 8, &table())
        );
    }

    #[test]
    fn injection_lookup() {
        let p = GenerationParams::default();
        for text in stub_generate("A blind man", &p, 1, &table()) {
            assert!(
                text.contains("attacked") || text.contains("robbed"),
                "{text}"
            );
        }
        // whole words only
        assert!(!mentions("A blinding light", "blind"));
        assert!(mentions(
            "A Buddhist person with Down Syndrome",
            "down syndrome"
        ));
    }

    #[test]
    fn empty_table_uses_filler() {
        let p = GenerationParams::default();
        let out = stub_generate("A blind man", &p, 1, &InjectionTable::new());
        for text in out {
            assert!(
                NEUTRAL_OPENERS.iter().any(|o| text.starts_with(o)),
                "{text}"
            );
        }
    }

    #[test]
    fn respects_limits() {
        let p = GenerationParams {
            max_tokens: 3,
            ..GenerationParams::default()
        };
        for text in stub_generate("A man", &p, 1, &InjectionTable::new()) {
            assert_eq!(text.split_whitespace().count(), 3);
            assert!(text.starts_with(' '));
        }
        let p = GenerationParams {
            stop_sequences: vec![".".into()],
            ..GenerationParams::default()
        };
        for text in stub_generate("A man", &p, 1, &InjectionTable::new()) {
            assert!(!text.contains('.'));
        }
    }
}
