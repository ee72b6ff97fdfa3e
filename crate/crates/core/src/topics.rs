//! Collapsed Gibbs LDA over completion text, used to surface the vocabulary
//! behind high- and low-scoring prompts.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generation::Completion;

const BUILTIN_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

/// Tokens shorter than this many characters never enter a corpus.
pub const MIN_TOKEN_CHARS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopicsError {
    #[error("corpus has no documents")]
    EmptyCorpus,
    #[error("{0} pool has no prompts")]
    EmptyPool(Pool),
    #[error(
        "{topics} topics requested but the {pool} corpus vocabulary has only {vocabulary} terms"
    )]
    TooManyTopics {
        pool: Pool,
        topics: usize,
        vocabulary: usize,
    },
    #[error("invalid topic-model parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    /// One word per line, `#` comments.
    pub fn parse(text: &str) -> Self {
        Self(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn builtin() -> Self {
        Self::parse(BUILTIN_STOPWORDS)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DocMeta {
    pub prompt_id: String,
    pub model_id: String,
    pub index: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Vec<usize>>,
    /// Sorted, unique.
    pub vocabulary: Vec<String>,
    pub doc_meta: Vec<DocMeta>,
    /// Documents that were empty after filtering.
    pub dropped: Vec<DocMeta>,
}

impl Corpus {
    /// Lowercases, splits on non-alphanumerics, drops stopwords and short
    /// tokens, then drops documents left empty.
    pub fn from_texts<'a, I>(texts: I, stopwords: &Stopwords) -> Self
    where
        I: IntoIterator<Item = (DocMeta, &'a str)>,
    {
        let mut kept: Vec<(DocMeta, Vec<String>)> = Vec::new();
        let mut dropped = Vec::new();
        for (meta, text) in texts {
            let tokens: Vec<String> = text
                .split(|c: char| !c.is_alphanumeric())
                .map(str::to_lowercase)
                .filter(|t| t.chars().count() >= MIN_TOKEN_CHARS && !stopwords.contains(t))
                .collect();
            if tokens.is_empty() {
                dropped.push(meta);
            } else {
                kept.push((meta, tokens));
            }
        }
        let vocabulary: Vec<String> = kept
            .iter()
            .flat_map(|(_, t)| t.iter().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index: BTreeMap<&str, usize> = vocabulary
            .iter()
            .enumerate()
            .map(|(i, w)| (w.as_str(), i))
            .collect();
        let documents = kept
            .iter()
            .map(|(_, toks)| toks.iter().map(|t| index[t.as_str()]).collect())
            .collect();
        Self {
            documents,
            doc_meta: kept.into_iter().map(|(m, _)| m).collect(),
            vocabulary,
            dropped,
        }
    }

    pub fn token_count(&self) -> usize {
        self.documents.iter().map(Vec::len).sum()
    }

    /// Raw term frequencies, indexed like `vocabulary`.
    pub fn term_frequencies(&self) -> Vec<u32> {
        let mut tf = vec![0; self.vocabulary.len()];
        for w in self.documents.iter().flatten() {
            tf[*w] += 1;
        }
        tf
    }
}

/// One document per completion, built from its extracted sentences.
pub fn tokenize_corpus(completions: &[Completion], stopwords: &Stopwords) -> Corpus {
    let texts: Vec<(DocMeta, String)> = completions
        .iter()
        .map(|c| {
            (
                DocMeta {
                    prompt_id: c.prompt_id.clone(),
                    model_id: c.model_id.clone(),
                    index: c.index,
                },
                c.sentences.join(" "),
            )
        })
        .collect();
    Corpus::from_texts(
        texts.iter().map(|(m, t)| (m.clone(), t.as_str())),
        stopwords,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdaParams {
    pub topics: usize,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl LdaParams {
    /// `alpha = 50 / K`, `beta = 0.01`, 500 sweeps.
    pub fn with_topics(topics: usize) -> Self {
        Self {
            topics,
            alpha: 50.0 / topics.max(1) as f64,
            beta: 0.01,
            iterations: 500,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<(), TopicsError> {
        if self.topics == 0 {
            return Err(TopicsError::InvalidParams(
                "topic count must be at least 1".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite())
            || !(self.beta > 0.0 && self.beta.is_finite())
        {
            return Err(TopicsError::InvalidParams(
                "alpha and beta must be positive".into(),
            ));
        }
        if self.iterations == 0 {
            return Err(TopicsError::InvalidParams(
                "iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

impl Default for LdaParams {
    fn default() -> Self {
        Self::with_topics(5)
    }
}

/// Fitted count state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub params: LdaParams,
    /// `topics x vocabulary`.
    pub topic_word_counts: Vec<Vec<u32>>,
    /// `documents x topics`.
    pub doc_topic_counts: Vec<Vec<u32>>,
    /// Per document, per token topic labels.
    pub assignments: Vec<Vec<usize>>,
}

impl TopicModel {
    pub fn topic_totals(&self) -> Vec<u64> {
        self.topic_word_counts
            .iter()
            .map(|row| row.iter().map(|&c| c as u64).sum())
            .collect()
    }

    /// Checks that the count tables agree with the assignments and the corpus.
    pub fn check_counts(&self, corpus: &Corpus) -> Result<(), String> {
        let k = self.params.topics;
        let mut from_assign = vec![vec![0u32; corpus.vocabulary.len()]; k];
        for (d, (doc, z)) in corpus.documents.iter().zip(&self.assignments).enumerate() {
            if doc.len() != z.len() {
                return Err(format!(
                    "document {d}: {} tokens, {} labels",
                    doc.len(),
                    z.len()
                ));
            }
            let mut per_doc = vec![0u32; k];
            for (&w, &t) in doc.iter().zip(z) {
                from_assign[t][w] += 1;
                per_doc[t] += 1;
            }
            if per_doc != self.doc_topic_counts[d] {
                return Err(format!("document {d}: topic counts disagree with labels"));
            }
            let sum: u32 = self.doc_topic_counts[d].iter().sum();
            if sum as usize != doc.len() {
                return Err(format!(
                    "document {d}: counts sum to {sum}, length {}",
                    doc.len()
                ));
            }
        }
        if from_assign != self.topic_word_counts {
            return Err("topic-word counts disagree with labels".into());
        }
        let total: u64 = self.topic_totals().iter().sum();
        if total as usize != corpus.token_count() {
            return Err(format!(
                "topics hold {total} tokens, corpus has {}",
                corpus.token_count()
            ));
        }
        Ok(())
    }
}

/// Collapsed Gibbs sampler. Sweeps visit documents and tokens in corpus
/// order and draw from one seeded stream, so a fit is reproducible bit for bit.
pub struct GibbsSampler<'a> {
    corpus: &'a Corpus,
    params: LdaParams,
    rng: ChaCha8Rng,
    topic_word: Vec<u32>,
    topic_totals: Vec<u32>,
    doc_topic: Vec<u32>,
    assignments: Vec<Vec<usize>>,
    weights: Vec<f64>,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(corpus: &'a Corpus, params: LdaParams) -> Result<Self, TopicsError> {
        params.validate()?;
        if corpus.documents.is_empty() {
            return Err(TopicsError::EmptyCorpus);
        }
        let k = params.topics;
        let v = corpus.vocabulary.len();
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut topic_word = vec![0; k * v];
        let mut topic_totals = vec![0; k];
        let mut doc_topic = vec![0; corpus.documents.len() * k];
        let mut assignments = Vec::with_capacity(corpus.documents.len());
        for (d, doc) in corpus.documents.iter().enumerate() {
            let labels: Vec<usize> = doc
                .iter()
                .map(|&w| {
                    let z = rng.random_range(0..k);
                    topic_word[z * v + w] += 1;
                    topic_totals[z] += 1;
                    doc_topic[d * k + z] += 1;
                    z
                })
                .collect();
            assignments.push(labels);
        }
        Ok(Self {
            corpus,
            params,
            rng,
            topic_word,
            topic_totals,
            doc_topic,
            assignments,
            weights: vec![0.0; k],
        })
    }

    /// Resamples every token once.
    pub fn sweep(&mut self) {
        let k = self.params.topics;
        let v = self.corpus.vocabulary.len();
        let (alpha, beta) = (self.params.alpha, self.params.beta);
        let v_beta = v as f64 * beta;
        for (d, doc) in self.corpus.documents.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                let old = self.assignments[d][i];
                self.topic_word[old * v + w] -= 1;
                self.topic_totals[old] -= 1;
                self.doc_topic[d * k + old] -= 1;

                let mut total = 0.0;
                for t in 0..k {
                    let word = (self.topic_word[t * v + w] as f64 + beta)
                        / (self.topic_totals[t] as f64 + v_beta);
                    total += word * (self.doc_topic[d * k + t] as f64 + alpha);
                    self.weights[t] = total;
                }
                let u = self.rng.random::<f64>() * total;
                let new = self.weights.iter().position(|&c| u < c).unwrap_or(k - 1);

                self.assignments[d][i] = new;
                self.topic_word[new * v + w] += 1;
                self.topic_totals[new] += 1;
                self.doc_topic[d * k + new] += 1;
            }
        }
    }

    pub fn model(&self) -> TopicModel {
        let k = self.params.topics;
        let v = self.corpus.vocabulary.len();
        TopicModel {
            params: self.params,
            topic_word_counts: self.topic_word.chunks(v).map(<[u32]>::to_vec).collect(),
            doc_topic_counts: self.doc_topic.chunks(k).map(<[u32]>::to_vec).collect(),
            assignments: self.assignments.clone(),
        }
    }
}

pub fn fit_lda(corpus: &Corpus, params: &LdaParams) -> Result<TopicModel, TopicsError> {
    let mut sampler = GibbsSampler::new(corpus, *params)?;
    for _ in 0..params.iterations {
        sampler.sweep();
    }
    Ok(sampler.model())
}

/// Per topic, the `k_terms` words with the highest smoothed topic-word
/// probability; ties go to the lexicographically smaller word.
pub fn top_terms(model: &TopicModel, corpus: &Corpus, k_terms: usize) -> Vec<Vec<String>> {
    let v = corpus.vocabulary.len();
    let beta = model.params.beta;
    let take = k_terms.min(v);
    model
        .topic_word_counts
        .iter()
        .map(|row| {
            let total: u64 = row.iter().map(|&c| c as u64).sum();
            let denom = total as f64 + v as f64 * beta;
            let mut ranked: Vec<(f64, &str)> = row
                .iter()
                .zip(&corpus.vocabulary)
                .map(|(&c, w)| ((c as f64 + beta) / denom, w.as_str()))
                .collect();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
            ranked
                .into_iter()
                .take(take)
                .map(|(_, w)| w.to_string())
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    High,
    Low,
}

impl std::fmt::Display for Pool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pool::High => "high",
            Pool::Low => "low",
        })
    }
}

/// Fit one model per pool, or one per prompt within each pool.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    #[default]
    Pool,
    Prompt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub id: usize,
    pub terms: Vec<String>,
}

/// Contents of `topics/<pool>.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolTopics {
    pub pool: Pool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_id: Option<String>,
    pub topics: Vec<Topic>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicsFragment {
    pub pools: Vec<PoolTopics>,
    /// Completions whose documents were empty after filtering.
    pub dropped: Vec<DocMeta>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopicsSettings {
    pub lda: LdaParams,
    pub top_terms: usize,
    pub granularity: Granularity,
}

fn fit_pool(
    pool: Pool,
    prompt_id: Option<&str>,
    completions: &[&Completion],
    settings: &TopicsSettings,
    stopwords: &Stopwords,
    dropped: &mut Vec<DocMeta>,
) -> Result<PoolTopics, TopicsError> {
    let owned: Vec<Completion> = completions.iter().map(|c| (*c).clone()).collect();
    let corpus = tokenize_corpus(&owned, stopwords);
    dropped.extend(corpus.dropped.iter().cloned());
    if corpus.documents.is_empty() {
        return Err(TopicsError::EmptyCorpus);
    }
    if settings.lda.topics > corpus.vocabulary.len() {
        return Err(TopicsError::TooManyTopics {
            pool,
            topics: settings.lda.topics,
            vocabulary: corpus.vocabulary.len(),
        });
    }
    let model = fit_lda(&corpus, &settings.lda)?;
    let topics = top_terms(&model, &corpus, settings.top_terms)
        .into_iter()
        .enumerate()
        .map(|(id, terms)| Topic { id, terms })
        .collect();
    Ok(PoolTopics {
        pool,
        prompt_id: prompt_id.map(str::to_string),
        topics,
    })
}

/// Topic models over every model's completions for the high and low pools.
pub fn topics_for_pools(
    high_pool: &[String],
    low_pool: &[String],
    completions: &[Completion],
    settings: &TopicsSettings,
    stopwords: &Stopwords,
) -> Result<TopicsFragment, TopicsError> {
    settings.lda.validate()?;
    let mut pools = Vec::new();
    let mut dropped = Vec::new();
    for (pool, ids) in [(Pool::High, high_pool), (Pool::Low, low_pool)] {
        if ids.is_empty() {
            return Err(TopicsError::EmptyPool(pool));
        }
        let mut members: Vec<&Completion> = completions
            .iter()
            .filter(|c| ids.contains(&c.prompt_id))
            .collect();
        members.sort_by(|a, b| {
            (&a.prompt_id, &a.model_id, a.index).cmp(&(&b.prompt_id, &b.model_id, b.index))
        });
        match settings.granularity {
            Granularity::Pool => pools.push(fit_pool(
                pool,
                None,
                &members,
                settings,
                stopwords,
                &mut dropped,
            )?),
            Granularity::Prompt => {
                for id in ids {
                    let mine: Vec<&Completion> = members
                        .iter()
                        .copied()
                        .filter(|c| &c.prompt_id == id)
                        .collect();
                    pools.push(fit_pool(
                        pool,
                        Some(id),
                        &mine,
                        settings,
                        stopwords,
                        &mut dropped,
                    )?);
                }
            }
        }
    }
    dropped.sort();
    dropped.dedup();
    Ok(TopicsFragment { pools, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(i: u32) -> DocMeta {
        DocMeta {
            prompt_id: "p".into(),
            model_id: "m".into(),
            index: i,
        }
    }

    fn corpus_of(texts: &[&str]) -> Corpus {
        Corpus::from_texts(
            texts.iter().enumerate().map(|(i, t)| (meta(i as u32), *t)),
            &Stopwords::builtin(),
        )
    }

    #[test]
    fn tokenization_rule() {
        let c = corpus_of(&["The man was killed."]);
        let words: Vec<&str> = c.documents[0]
            .iter()
            .map(|&w| c.vocabulary[w].as_str())
            .collect();
        assert_eq!(words, ["man", "killed"]);
        assert_eq!(c.vocabulary, ["killed", "man"]);
    }

    #[test]
    fn all_stopword_document_dropped() {
        let c = corpus_of(&["The man was killed.", "It was the one that is."]);
        assert_eq!(c.documents.len(), 1);
        assert_eq!(c.dropped, vec![meta(1)]);
        assert_eq!(
            c,
            corpus_of(&["The man was killed.", "It was the one that is."])
        );
    }

    #[test]
    fn single_topic_degeneracy() {
        let c = corpus_of(&["apple apple banana", "banana mango apple", "mango"]);
        let mut params = LdaParams::with_topics(1);
        params.iterations = 20;
        let m = fit_lda(&c, &params).unwrap();
        assert!(m.assignments.iter().flatten().all(|&z| z == 0));
        assert_eq!(m.topic_word_counts[0], c.term_frequencies());
        assert_eq!(top_terms(&m, &c, 10)[0], ["apple", "banana", "mango"]);
    }

    #[test]
    fn frequency_order_and_ties() {
        let c = corpus_of(&["aaa aaa bbb"]);
        let m = fit_lda(&c, &LdaParams::with_topics(1)).unwrap();
        assert_eq!(top_terms(&m, &c, 5)[0], ["aaa", "bbb"]);
        let c = corpus_of(&["zzz yyy"]);
        let m = fit_lda(&c, &LdaParams::with_topics(1)).unwrap();
        assert_eq!(top_terms(&m, &c, 1)[0], ["yyy"]);
    }

    #[test]
    fn empty_corpus_and_bad_params() {
        let c = corpus_of(&["the"]);
        assert_eq!(
            fit_lda(&c, &LdaParams::default()),
            Err(TopicsError::EmptyCorpus)
        );
        let c = corpus_of(&["apple"]);
        let p = LdaParams {
            beta: 0.0,
            ..LdaParams::default()
        };
        assert!(matches!(
            fit_lda(&c, &p),
            Err(TopicsError::InvalidParams(_))
        ));
        let p = LdaParams::with_topics(0);
        assert!(matches!(
            fit_lda(&c, &p),
            Err(TopicsError::InvalidParams(_))
        ));
    }

    #[test]
    fn counts_hold_after_each_sweep() {
        let c = corpus_of(&[
            "apple banana mango apple",
            "engine piston gear",
            "apple gear mango piston",
        ]);
        let mut s = GibbsSampler::new(
            &c,
            LdaParams {
                iterations: 1,
                ..LdaParams::with_topics(3)
            },
        )
        .unwrap();
        s.model().check_counts(&c).unwrap();
        for _ in 0..25 {
            s.sweep();
            s.model().check_counts(&c).unwrap();
        }
    }

    #[test]
    fn seeded_fits_are_identical() {
        let c = corpus_of(&["apple banana mango", "engine piston gear", "apple gear"]);
        let p = LdaParams {
            iterations: 50,
            ..LdaParams::with_topics(2)
        };
        assert_eq!(fit_lda(&c, &p).unwrap(), fit_lda(&c, &p).unwrap());
    }
}
