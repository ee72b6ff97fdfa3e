//! Fixtures shared by the pipeline benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use isect_core::battery::{build_battery, TermRegistry};
use isect_core::generation::{stub_generate, GenerationParams, InjectionTable};
use isect_core::topics::{Corpus, DocMeta, Stopwords};

/// Stub completions for the whole default battery, `per_prompt` each.
pub fn stub_texts(per_prompt: u32) -> Vec<(DocMeta, String)> {
    let battery = build_battery(&TermRegistry::default()).expect("default terms");
    let params = GenerationParams {
        n_completions: per_prompt,
        ..GenerationParams::default()
    };
    let injections = InjectionTable::new();
    battery
        .prompts()
        .iter()
        .flat_map(|p| {
            stub_generate(&p.text, &params, 42, &injections)
                .into_iter()
                .enumerate()
                .map(|(i, text)| {
                    let meta = DocMeta {
                        prompt_id: p.prompt_id.clone(),
                        model_id: "stub".into(),
                        index: i as u32,
                    };
                    (meta, text)
                })
        })
        .collect()
}

pub fn stub_corpus(per_prompt: u32) -> Corpus {
    let texts = stub_texts(per_prompt);
    Corpus::from_texts(
        texts.iter().map(|(m, t)| (m.clone(), t.as_str())),
        &Stopwords::builtin(),
    )
}

/// `n` seeded scores spread over `[offset, offset + 0.5)`.
pub fn scores(n: usize, offset: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| offset + rng.random::<f64>() * 0.5).collect()
}
