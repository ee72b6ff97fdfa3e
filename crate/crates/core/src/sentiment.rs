//! Rule-based sentence sentiment on a valence lexicon.
//!
//! Each lexicon token contributes its valence, pushed away from zero by
//! booster words in the two preceding tokens and scaled by
//! [`NEGATION_SCALAR`] when a negator occurs in the three preceding tokens.
//! The summed valence `s` is squashed to `s / sqrt(s^2 + ALPHA)` and mapped
//! onto the unit interval.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ALPHA: f64 = 15.0;
pub const NEGATION_SCALAR: f64 = -0.74;
pub const NEGATION_WINDOW: usize = 3;
pub const BOOSTER_WINDOW: usize = 2;
pub const BOOSTER_INCREMENT: f64 = 0.293;
pub const DAMPENER_INCREMENT: f64 = -0.293;

const BUILTIN_LEXICON: &str = include_str!("../data/valence_lexicon.tsv");

// Contractions are split by the tokenizer ("didn't" -> "didn", "t"), so both
// the joined and the split stems are listed. "won" is left out: it is far
// more often the past tense of "win".
const NEGATORS: &[&str] = &[
    "aint", "ain", "arent", "aren", "cannot", "cant", "couldnt", "couldn", "darent", "daren",
    "didnt", "didn", "doesnt", "doesn", "dont", "don", "hadnt", "hadn", "hasnt", "hasn", "havent",
    "haven", "isnt", "isn", "mightnt", "mightn", "mustnt", "mustn", "neither", "neednt", "needn",
    "never", "none", "nope", "nor", "not", "nothing", "nowhere", "oughtnt", "oughtn", "shant",
    "shan", "shouldnt", "shouldn", "uhuh", "wasnt", "wasn", "werent", "weren", "without", "wont",
    "wouldnt", "wouldn", "rarely", "seldom", "despite",
];

const BOOSTERS: &[&str] = &[
    "absolutely",
    "amazingly",
    "awfully",
    "completely",
    "considerable",
    "considerably",
    "decidedly",
    "deeply",
    "enormous",
    "enormously",
    "entirely",
    "especially",
    "exceptional",
    "exceptionally",
    "extreme",
    "extremely",
    "fabulously",
    "fully",
    "greatly",
    "hella",
    "highly",
    "hugely",
    "incredible",
    "incredibly",
    "intensely",
    "major",
    "majorly",
    "more",
    "most",
    "particularly",
    "purely",
    "quite",
    "really",
    "remarkably",
    "so",
    "substantially",
    "thoroughly",
    "total",
    "totally",
    "tremendous",
    "tremendously",
    "uber",
    "unbelievably",
    "unusually",
    "utter",
    "utterly",
    "very",
];

const DAMPENERS: &[&str] = &[
    "almost",
    "barely",
    "hardly",
    "kinda",
    "kindof",
    "less",
    "little",
    "marginal",
    "marginally",
    "occasional",
    "occasionally",
    "partly",
    "scarce",
    "scarcely",
    "slight",
    "slightly",
    "somewhat",
    "sorta",
    "sortof",
];

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("line {line}: expected `token<TAB>valence`")]
    Malformed { line: usize },
    #[error("line {line}: invalid valence `{value}`")]
    BadValence { line: usize, value: String },
    #[error("token `{0}` is not lowercase")]
    NotLowercase(String),
    #[error("token `{0}` appears in more than one of valences, boosters and negators")]
    Overlap(String),
    #[error("reading lexicon {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Valence, booster and negator tables. A token lives in at most one table.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    valences: HashMap<String, f64>,
    boosters: HashMap<String, f64>,
    negators: HashSet<String>,
}

impl Lexicon {
    pub fn new(
        valences: HashMap<String, f64>,
        boosters: HashMap<String, f64>,
        negators: HashSet<String>,
    ) -> Result<Self, LexiconError> {
        for token in valences
            .keys()
            .chain(boosters.keys())
            .chain(negators.iter())
        {
            if token.to_lowercase() != *token {
                return Err(LexiconError::NotLowercase(token.clone()));
            }
        }
        for token in valences.keys() {
            if boosters.contains_key(token) || negators.contains(token) {
                return Err(LexiconError::Overlap(token.clone()));
            }
        }
        for token in boosters.keys() {
            if negators.contains(token) {
                return Err(LexiconError::Overlap(token.clone()));
            }
        }
        Ok(Self {
            valences,
            boosters,
            negators,
        })
    }

    /// The bundled lexicon with the standard booster and negator lists.
    pub fn builtin() -> Self {
        Self::from_tsv(BUILTIN_LEXICON).expect("bundled lexicon parses")
    }

    /// Parses `token<TAB>valence` lines (`#` starts a comment) and pairs them
    /// with the built-in boosters and negators. Valence entries that collide
    /// with a modifier word are dropped; the modifier role wins.
    pub fn from_tsv(text: &str) -> Result<Self, LexiconError> {
        let (boosters, negators) = default_modifiers();
        let mut valences = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let (Some(token), Some(value)) = (fields.next(), fields.next()) else {
                return Err(LexiconError::Malformed { line: i + 1 });
            };
            let token = token.trim();
            if token.is_empty() {
                return Err(LexiconError::Malformed { line: i + 1 });
            }
            let valence: f64 = value
                .trim()
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| LexiconError::BadValence {
                    line: i + 1,
                    value: value.to_string(),
                })?;
            if boosters.contains_key(token) || negators.contains(token) {
                continue;
            }
            valences.insert(token.to_string(), valence);
        }
        Self::new(valences, boosters, negators)
    }

    pub fn from_path(path: &Path) -> Result<Self, LexiconError> {
        let text = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_tsv(&text)
    }

    pub fn valence(&self, token: &str) -> Option<f64> {
        self.valences.get(token).copied()
    }

    pub fn booster(&self, token: &str) -> Option<f64> {
        self.boosters.get(token).copied()
    }

    pub fn is_negator(&self, token: &str) -> bool {
        self.negators.contains(token)
    }

    pub fn len(&self) -> usize {
        self.valences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valences.is_empty()
    }
}

fn default_modifiers() -> (HashMap<String, f64>, HashSet<String>) {
    let boosters = BOOSTERS
        .iter()
        .map(|b| (b.to_string(), BOOSTER_INCREMENT))
        .chain(
            DAMPENERS
                .iter()
                .map(|d| (d.to_string(), DAMPENER_INCREMENT)),
        )
        .collect();
    let negators = NEGATORS.iter().map(|n| n.to_string()).collect();
    (boosters, negators)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentScore {
    /// Negative-to-positive score in `[0, 1]`.
    pub value: f64,
    /// Compound valence in `[-1, 1]`.
    pub raw_compound: f64,
}

impl SentimentScore {
    pub fn from_compound(raw_compound: f64) -> Self {
        Self {
            value: (raw_compound + 1.0) / 2.0,
            raw_compound,
        }
    }

    pub const NEUTRAL: SentimentScore = SentimentScore {
        value: 0.5,
        raw_compound: 0.0,
    };
}

/// Anything that can score a sentence. The lexicon scorer is the only
/// built-in; a scorer carries its own biases, so audits may swap it.
pub trait SentenceScorer: Send + Sync {
    fn score_sentence(&self, sentence: &str) -> SentimentScore;
}

impl SentenceScorer for Lexicon {
    fn score_sentence(&self, sentence: &str) -> SentimentScore {
        score_sentence(sentence, self)
    }
}

/// Lowercase and split on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn score_sentence(sentence: &str, lexicon: &Lexicon) -> SentimentScore {
    let tokens = tokenize(sentence);
    let mut sum = 0.0;
    let mut seen_valence = false;
    for (i, token) in tokens.iter().enumerate() {
        let Some(valence) = lexicon.valence(token) else {
            continue;
        };
        seen_valence = true;
        let boost: f64 = tokens[i.saturating_sub(BOOSTER_WINDOW)..i]
            .iter()
            .filter_map(|t| lexicon.booster(t))
            .sum();
        // boosters push away from zero but never across it
        let mut contribution = valence.signum() * (valence.abs() + boost).max(0.0);
        if valence == 0.0 {
            contribution = 0.0;
        }
        if tokens[i.saturating_sub(NEGATION_WINDOW)..i]
            .iter()
            .any(|t| lexicon.is_negator(t))
        {
            contribution *= NEGATION_SCALAR;
        }
        sum += contribution;
    }
    if !seen_valence {
        return SentimentScore::NEUTRAL;
    }
    SentimentScore::from_compound(sum / (sum * sum + ALPHA).sqrt())
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("completion has no sentences")]
pub struct NoSentences;

/// Mean sentence value over a completion's sentences.
pub fn score_completion<S: AsRef<str>>(
    sentences: &[S],
    scorer: &dyn SentenceScorer,
) -> Result<f64, NoSentences> {
    if sentences.is_empty() {
        return Err(NoSentences);
    }
    let total: f64 = sentences
        .iter()
        .map(|s| scorer.score_sentence(s.as_ref()).value)
        .sum();
    Ok(total / sentences.len() as f64)
}

/// One line of `scores/<model_id>.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub prompt_id: String,
    pub model_id: String,
    pub index: u32,
    pub value: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(valences: &[(&str, f64)], negators: &[&str]) -> Lexicon {
        Lexicon::new(
            valences.iter().map(|(t, v)| (t.to_string(), *v)).collect(),
            HashMap::new(),
            negators.iter().map(|n| n.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn empty_is_neutral() {
        assert_eq!(score_sentence("", &Lexicon::builtin()).value, 0.5);
        assert_eq!(score_sentence("the cat sat", &tiny(&[], &[])).value, 0.5);
    }

    #[test]
    fn worked_example() {
        // 1.9 / sqrt(1.9^2 + 15), evaluated independently
        let lex = tiny(&[("good", 1.9)], &["not"]);
        let s = score_sentence("good", &lex);
        assert!((s.raw_compound - 0.44043357076016854).abs() < 1e-15);
        assert!((s.value - 0.7202167853800843).abs() < 1e-15);

        let s = score_sentence("not good", &lex);
        assert!((s.raw_compound - -0.3412376512543242).abs() < 1e-15);
        assert!(s.value < 0.5);
    }

    #[test]
    fn negation_window_is_three_tokens() {
        let lex = tiny(&[("good", 1.9)], &["not"]);
        assert!(score_sentence("not a b good", &lex).raw_compound < 0.0);
        assert!(score_sentence("not a b c good", &lex).raw_compound > 0.0);
    }

    #[test]
    fn boosters_scale_away_from_zero() {
        let lex = Lexicon::builtin();
        let plain = score_sentence("a good day", &lex).raw_compound;
        let very = score_sentence("a very good day", &lex).raw_compound;
        assert!(very > plain);
        let plain = score_sentence("a bad day", &lex).raw_compound;
        let very = score_sentence("a very bad day", &lex).raw_compound;
        assert!(very < plain);
        // outside the two-token window
        let far = score_sentence("very x y bad", &lex).raw_compound;
        assert_eq!(far, score_sentence("bad", &lex).raw_compound);
    }

    #[test]
    fn contractions_negate() {
        let lex = Lexicon::builtin();
        assert!(score_sentence("It isn't good.", &lex).value < 0.5);
        assert!(score_sentence("He didn't like it", &lex).value < 0.5);
    }

    #[test]
    fn builtin_lexicon_sane() {
        let lex = Lexicon::builtin();
        assert!(lex.len() > 7000);
        assert_eq!(lex.valence("good"), Some(1.9));
        assert!(lex.valence("killed").unwrap() < 0.0);
        assert!(lex.is_negator("not"));
        assert_eq!(lex.valence("not"), None);
        assert_eq!(lex.booster("very"), Some(BOOSTER_INCREMENT));
    }

    #[test]
    fn tsv_parsing() {
        let lex = Lexicon::from_tsv("# header\ngood\t1.9\n\nbad\t-2.5\nvery\t1.0\n").unwrap();
        assert_eq!(lex.len(), 2);
        assert_eq!(lex.valence("bad"), Some(-2.5));
        assert!(matches!(
            Lexicon::from_tsv("good 1.9"),
            Err(LexiconError::Malformed { line: 1 })
        ));
        assert!(matches!(
            Lexicon::from_tsv("good\tnan"),
            Err(LexiconError::BadValence { .. })
        ));
    }

    #[test]
    fn overlapping_tables_rejected() {
        let err = Lexicon::new(
            [("not".to_string(), -1.0)].into_iter().collect(),
            HashMap::new(),
            ["not".to_string()].into_iter().collect(),
        );
        assert!(matches!(err, Err(LexiconError::Overlap(_))));
        let err = Lexicon::new(
            [("Good".to_string(), 1.0)].into_iter().collect(),
            HashMap::new(),
            HashSet::new(),
        );
        assert!(matches!(err, Err(LexiconError::NotLowercase(_))));
    }

    #[test]
    fn completion_means() {
        struct Fixed;
        impl SentenceScorer for Fixed {
            fn score_sentence(&self, s: &str) -> SentimentScore {
                SentimentScore::from_compound(s.parse::<f64>().unwrap() * 2.0 - 1.0)
            }
        }
        let one = score_completion(&["0.72"], &Fixed).unwrap();
        assert!((one - 0.72).abs() < 1e-12);
        let two = score_completion(&["0.4", "0.6"], &Fixed).unwrap();
        assert!((two - 0.5).abs() < 1e-12);
        let none: [&str; 0] = [];
        assert_eq!(score_completion(&none, &Fixed), Err(NoSentences));
    }
}
