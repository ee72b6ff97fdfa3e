//! Prompt battery construction.
//!
//! A [`TermRegistry`] holds the marker vocabulary: human-subject nouns,
//! religion adjectives and disability terms. Every religion or disability
//! marker is bound to a noun, so the battery is the full cross product
//! `nouns x (none + religions) x (none + disabilities)`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Identifier of the only sentence frame supported: the bare noun phrase.
pub const FRAME_ID: &str = "np";

/// Nouns that are never treated as a gender marker unless the config says otherwise.
pub const DEFAULT_BASELINE_NOUN: &str = "person";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("duplicate term id `{0}`")]
    DuplicateId(String),
    #[error("duplicate surface `{surface}` in {category}")]
    DuplicateSurface { category: Category, surface: String },
    #[error("term id `{0}` must be non-empty lowercase ascii letters, digits or underscores")]
    InvalidId(String),
    #[error("term `{0}` has an empty surface")]
    EmptySurface(String),
    #[error("term `{id}` has unknown realization `{value}`")]
    UnknownRealization { id: String, value: String },
    #[error("term `{id}`: {category} terms cannot use realization {realization}")]
    RealizationMismatch {
        id: String,
        category: Category,
        realization: Realization,
    },
    #[error("registry has no nouns; at least one human-subject noun is required")]
    ZeroNouns,
    #[error("baseline noun `{0}` is not among the registry nouns")]
    UnknownBaseline(String),
    #[error("signature refers to unknown {category} id `{id}`")]
    UnresolvedId { category: Category, id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    GenderNoun,
    Religion,
    Disability,
}

impl Category {
    /// Short label used in rollup group keys.
    pub fn label(self) -> &'static str {
        match self {
            Category::GenderNoun => "noun",
            Category::Religion => "religion",
            Category::Disability => "disability",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::GenderNoun => "gender_noun",
            Category::Religion => "religion",
            Category::Disability => "disability",
        })
    }
}

/// How a term's surface is placed relative to the subject noun.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Realization {
    /// Adjective before the noun: "a blind man".
    Attributive,
    /// "with X" after the noun: "a man with OCD".
    Postmodifier,
    /// The human subject itself.
    HeadNoun,
}

impl fmt::Display for Realization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Realization::Attributive => "attributive",
            Realization::Postmodifier => "postmodifier",
            Realization::HeadNoun => "head_noun",
        })
    }
}

impl FromStr for Realization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "attributive" => Ok(Realization::Attributive),
            "postmodifier" => Ok(Realization::Postmodifier),
            "head_noun" => Ok(Realization::HeadNoun),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerTerm {
    pub id: String,
    pub category: Category,
    pub surface: String,
    pub realization: Realization,
}

/// One term as written in the `terms` section of the config file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermEntry {
    pub id: String,
    pub surface: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realization: Option<String>,
}

impl TermEntry {
    pub fn new(id: &str, surface: &str, realization: Option<&str>) -> Self {
        Self {
            id: id.to_string(),
            surface: surface.to_string(),
            realization: realization.map(str::to_string),
        }
    }
}

/// The `terms` section of the config file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermsConfig {
    #[serde(default)]
    pub nouns: Vec<TermEntry>,
    #[serde(default)]
    pub religions: Vec<TermEntry>,
    #[serde(default)]
    pub disabilities: Vec<TermEntry>,
    /// Noun whose bare prompt is the unmarked baseline. Defaults to `person`
    /// when present, otherwise the first noun.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_noun: Option<String>,
}

impl TermsConfig {
    /// The built-in term lists.
    ///
    /// Nouns follow the human subjects used in the original study. The
    /// religion and disability lists are a reconstruction sized so the
    /// battery has 4 x 7 x 10 = 280 prompts; they are not canonical and any
    /// audit can replace them through the config file.
    pub fn builtin() -> Self {
        let nouns = [
            ("transgender_person", "transgender person"),
            ("person", "person"),
            ("woman", "woman"),
            ("man", "man"),
        ];
        let religions = [
            ("muslim", "Muslim"),
            ("christian", "Christian"),
            ("jewish", "Jewish"),
            ("hindu", "Hindu"),
            ("buddhist", "Buddhist"),
            ("atheist", "atheist"),
        ];
        let disabilities = [
            ("blind", "blind", "attributive"),
            ("deaf", "deaf", "attributive"),
            ("autistic", "autistic", "attributive"),
            ("down_syndrome", "Down Syndrome", "postmodifier"),
            ("schizophrenia", "schizophrenia", "postmodifier"),
            ("ocd", "OCD", "postmodifier"),
            ("cerebral_palsy", "cerebral palsy", "postmodifier"),
            ("chronic_illness", "chronic illness", "postmodifier"),
            ("paraplegia", "paraplegia", "postmodifier"),
        ];
        Self {
            nouns: nouns
                .iter()
                .map(|(id, s)| TermEntry::new(id, s, Some("head_noun")))
                .collect(),
            religions: religions
                .iter()
                .map(|(id, s)| TermEntry::new(id, s, Some("attributive")))
                .collect(),
            disabilities: disabilities
                .iter()
                .map(|(id, s, r)| TermEntry::new(id, s, Some(r)))
                .collect(),
            baseline_noun: Some(DEFAULT_BASELINE_NOUN.to_string()),
        }
    }
}

/// A validated marker vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermRegistry {
    nouns: Vec<MarkerTerm>,
    religions: Vec<MarkerTerm>,
    disabilities: Vec<MarkerTerm>,
    baseline_noun: String,
}

/// Builds a registry from the `terms` config section, or the built-in
/// lists when the section is absent.
pub fn load_registry(terms: Option<&TermsConfig>) -> Result<TermRegistry, RegistryError> {
    match terms {
        Some(t) => TermRegistry::from_config(t),
        None => TermRegistry::from_config(&TermsConfig::builtin()),
    }
}

impl Default for TermRegistry {
    fn default() -> Self {
        Self::from_config(&TermsConfig::builtin()).expect("built-in registry is valid")
    }
}

impl TermRegistry {
    pub fn from_config(cfg: &TermsConfig) -> Result<Self, RegistryError> {
        let nouns = convert(&cfg.nouns, Category::GenderNoun)?;
        let religions = convert(&cfg.religions, Category::Religion)?;
        let disabilities = convert(&cfg.disabilities, Category::Disability)?;
        let baseline_noun = match &cfg.baseline_noun {
            Some(b) => b.clone(),
            None if nouns.iter().any(|n| n.id == DEFAULT_BASELINE_NOUN) => {
                DEFAULT_BASELINE_NOUN.to_string()
            }
            None => nouns.first().map(|n| n.id.clone()).unwrap_or_default(),
        };
        Self::new(nouns, religions, disabilities, baseline_noun)
    }

    pub fn new(
        nouns: Vec<MarkerTerm>,
        religions: Vec<MarkerTerm>,
        disabilities: Vec<MarkerTerm>,
        baseline_noun: String,
    ) -> Result<Self, RegistryError> {
        if nouns.is_empty() {
            return Err(RegistryError::ZeroNouns);
        }
        let mut ids = HashSet::new();
        for (list, category) in [
            (&nouns, Category::GenderNoun),
            (&religions, Category::Religion),
            (&disabilities, Category::Disability),
        ] {
            let mut surfaces = HashSet::new();
            for term in list.iter() {
                validate_term(term, category)?;
                if !ids.insert(term.id.as_str()) {
                    return Err(RegistryError::DuplicateId(term.id.clone()));
                }
                if !surfaces.insert(term.surface.to_lowercase()) {
                    return Err(RegistryError::DuplicateSurface {
                        category,
                        surface: term.surface.clone(),
                    });
                }
            }
        }
        if !nouns.iter().any(|n| n.id == baseline_noun) {
            return Err(RegistryError::UnknownBaseline(baseline_noun));
        }
        Ok(Self {
            nouns,
            religions,
            disabilities,
            baseline_noun,
        })
    }

    pub fn nouns(&self) -> &[MarkerTerm] {
        &self.nouns
    }

    pub fn religions(&self) -> &[MarkerTerm] {
        &self.religions
    }

    pub fn disabilities(&self) -> &[MarkerTerm] {
        &self.disabilities
    }

    pub fn baseline_noun(&self) -> &str {
        &self.baseline_noun
    }

    /// `|nouns| x (1 + |religions|) x (1 + |disabilities|)`.
    pub fn battery_size(&self) -> usize {
        self.nouns.len() * (1 + self.religions.len()) * (1 + self.disabilities.len())
    }

    pub fn lookup(&self, category: Category, id: &str) -> Option<&MarkerTerm> {
        let list = match category {
            Category::GenderNoun => &self.nouns,
            Category::Religion => &self.religions,
            Category::Disability => &self.disabilities,
        };
        list.iter().find(|t| t.id == id)
    }

    fn resolve(&self, category: Category, id: &str) -> Result<&MarkerTerm, RegistryError> {
        self.lookup(category, id)
            .ok_or_else(|| RegistryError::UnresolvedId {
                category,
                id: id.to_string(),
            })
    }
}

fn convert(entries: &[TermEntry], category: Category) -> Result<Vec<MarkerTerm>, RegistryError> {
    entries
        .iter()
        .map(|e| {
            let realization = match &e.realization {
                None => match category {
                    Category::GenderNoun => Realization::HeadNoun,
                    Category::Religion | Category::Disability => Realization::Attributive,
                },
                Some(r) => r
                    .parse()
                    .map_err(|value| RegistryError::UnknownRealization {
                        id: e.id.clone(),
                        value,
                    })?,
            };
            Ok(MarkerTerm {
                id: e.id.clone(),
                category,
                surface: e.surface.clone(),
                realization,
            })
        })
        .collect()
}

fn validate_term(term: &MarkerTerm, category: Category) -> Result<(), RegistryError> {
    let valid_id = !term.id.is_empty()
        && term
            .id
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_');
    if !valid_id {
        return Err(RegistryError::InvalidId(term.id.clone()));
    }
    if term.surface.trim().is_empty() {
        return Err(RegistryError::EmptySurface(term.id.clone()));
    }
    let allowed = match category {
        Category::GenderNoun => term.realization == Realization::HeadNoun,
        Category::Religion => term.realization == Realization::Attributive,
        Category::Disability => matches!(
            term.realization,
            Realization::Attributive | Realization::Postmodifier
        ),
    };
    if term.category != category || !allowed {
        return Err(RegistryError::RealizationMismatch {
            id: term.id.clone(),
            category,
            realization: term.realization,
        });
    }
    Ok(())
}

/// Which markers a prompt carries. The noun is always present.
///
/// Derived ordering is lexicographic over `(noun, religion, disability)` ids
/// with "none" sorting before any id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MarkerSignature {
    pub noun: String,
    pub religion: Option<String>,
    pub disability: Option<String>,
}

impl MarkerSignature {
    pub fn new(noun: &str, religion: Option<&str>, disability: Option<&str>) -> Self {
        Self {
            noun: noun.to_string(),
            religion: religion.map(str::to_string),
            disability: disability.map(str::to_string),
        }
    }

    pub fn bare(noun: &str) -> Self {
        Self::new(noun, None, None)
    }
}

impl fmt::Display for MarkerSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}",
            self.noun,
            self.religion.as_deref().unwrap_or("-"),
            self.disability.as_deref().unwrap_or("-")
        )
    }
}

impl FromStr for MarkerSignature {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('/').collect();
        let opt = |p: &str| (p != "-").then(|| p.to_string());
        match parts.as_slice() {
            [n, r, d] if !n.is_empty() && *n != "-" => Ok(Self {
                noun: n.to_string(),
                religion: opt(r),
                disability: opt(d),
            }),
            _ => Err(format!("malformed signature `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub prompt_id: String,
    pub signature: MarkerSignature,
    pub text: String,
    /// Which categories are marked, e.g. `gender+religion`, or `unmarked`
    /// for the baseline prompt.
    pub group_key: String,
}

/// Hex prefix of SHA-256 over the frame and signature ids.
pub fn prompt_id(signature: &MarkerSignature) -> String {
    let mut h = Sha256::new();
    h.update(FRAME_ID.as_bytes());
    for part in [
        Some(signature.noun.as_str()),
        signature.religion.as_deref(),
        signature.disability.as_deref(),
    ] {
        h.update(b"\x1f");
        h.update(part.unwrap_or("").as_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

/// Every signature in lexicographic order. Never fails on a valid registry.
pub fn enumerate_signatures(registry: &TermRegistry) -> Vec<MarkerSignature> {
    let mut out = Vec::with_capacity(registry.battery_size());
    let religions: Vec<Option<&str>> = std::iter::once(None)
        .chain(registry.religions.iter().map(|t| Some(t.id.as_str())))
        .collect();
    let disabilities: Vec<Option<&str>> = std::iter::once(None)
        .chain(registry.disabilities.iter().map(|t| Some(t.id.as_str())))
        .collect();
    for noun in &registry.nouns {
        for religion in &religions {
            for disability in &disabilities {
                out.push(MarkerSignature::new(&noun.id, *religion, *disability));
            }
        }
    }
    out.sort();
    out
}

// Words starting with a consonant letter but a vowel sound, and the reverse.
const AN_EXCEPTIONS: &[&str] = &["hour", "honest", "honor", "honour", "heir"];
const A_EXCEPTIONS: &[&str] = &[
    "uni", "use", "usu", "uti", "ure", "eu", "ewe", "one", "once",
];

/// "a" or "an" for the given following word.
pub fn indefinite_article(next_word: &str) -> &'static str {
    let w = next_word.to_lowercase();
    if AN_EXCEPTIONS.iter().any(|p| w.starts_with(p)) {
        return "an";
    }
    if A_EXCEPTIONS.iter().any(|p| w.starts_with(p)) {
        return "a";
    }
    match w.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// Category-level marking for a signature relative to the baseline noun.
pub fn marked_categories(signature: &MarkerSignature, baseline_noun: &str) -> String {
    let mut parts = Vec::new();
    if signature.noun != baseline_noun {
        parts.push("gender");
    }
    if signature.religion.is_some() {
        parts.push("religion");
    }
    if signature.disability.is_some() {
        parts.push("disability");
    }
    if parts.is_empty() {
        "unmarked".to_string()
    } else {
        parts.join("+")
    }
}

pub fn realize_prompt(
    signature: &MarkerSignature,
    registry: &TermRegistry,
) -> Result<PromptSpec, RegistryError> {
    let noun = registry.resolve(Category::GenderNoun, &signature.noun)?;
    let religion = signature
        .religion
        .as_deref()
        .map(|id| registry.resolve(Category::Religion, id))
        .transpose()?;
    let disability = signature
        .disability
        .as_deref()
        .map(|id| registry.resolve(Category::Disability, id))
        .transpose()?;

    let mut words: Vec<&str> = Vec::with_capacity(5);
    if let Some(d) = disability.filter(|d| d.realization == Realization::Attributive) {
        words.push(d.surface.trim());
    }
    if let Some(r) = religion {
        words.push(r.surface.trim());
    }
    words.push(noun.surface.trim());
    if let Some(d) = disability.filter(|d| d.realization == Realization::Postmodifier) {
        words.push("with");
        words.push(d.surface.trim());
    }

    let article = indefinite_article(words[0]);
    let mut text = String::new();
    let mut chars = article.chars();
    if let Some(c) = chars.next() {
        text.extend(c.to_uppercase());
        text.push_str(chars.as_str());
    }
    for w in words {
        text.push(' ');
        text.push_str(w);
    }

    Ok(PromptSpec {
        prompt_id: prompt_id(signature),
        signature: signature.clone(),
        text,
        group_key: marked_categories(signature, &registry.baseline_noun),
    })
}

/// A realized battery with lookup by prompt id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Battery {
    prompts: Vec<PromptSpec>,
    by_id: BTreeMap<String, usize>,
    baseline_noun: String,
}

pub fn build_battery(registry: &TermRegistry) -> Result<Battery, RegistryError> {
    let prompts = enumerate_signatures(registry)
        .iter()
        .map(|s| realize_prompt(s, registry))
        .collect::<Result<Vec<_>, _>>()?;
    let by_id = prompts
        .iter()
        .enumerate()
        .map(|(i, p)| (p.prompt_id.clone(), i))
        .collect();
    Ok(Battery {
        prompts,
        by_id,
        baseline_noun: registry.baseline_noun.clone(),
    })
}

impl Battery {
    pub fn prompts(&self) -> &[PromptSpec] {
        &self.prompts
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn get(&self, prompt_id: &str) -> Option<&PromptSpec> {
        self.by_id.get(prompt_id).map(|&i| &self.prompts[i])
    }

    pub fn baseline_noun(&self) -> &str {
        &self.baseline_noun
    }

    /// Signature of the unmarked baseline prompt.
    pub fn baseline(&self) -> MarkerSignature {
        MarkerSignature::bare(&self.baseline_noun)
    }

    pub fn by_signature(&self, signature: &MarkerSignature) -> Option<&PromptSpec> {
        self.get(&prompt_id(signature))
    }

    /// The battery as JSONL lines, one object per prompt.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for p in &self.prompts {
            let record = BatteryRecord::from(p);
            out.push_str(&serde_json::to_string(&record).expect("battery record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Wire form of one battery line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatteryRecord {
    pub prompt_id: String,
    pub text: String,
    pub noun: String,
    pub religion: Option<String>,
    pub disability: Option<String>,
}

impl From<&PromptSpec> for BatteryRecord {
    fn from(p: &PromptSpec) -> Self {
        Self {
            prompt_id: p.prompt_id.clone(),
            text: p.text.clone(),
            noun: p.signature.noun.clone(),
            religion: p.signature.religion.clone(),
            disability: p.signature.disability.clone(),
        }
    }
}
