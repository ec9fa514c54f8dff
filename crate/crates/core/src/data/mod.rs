//! Annotated utterances, corpus schemas, vocabulary construction and the
//! synthetic corpus generator.

mod bio;
mod corpus;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use self::bio::{repair_bio, validate_bio, BioTag, BioViolation};
pub use self::corpus::{
    parse_corpus, read_examples, schema_sidecar_path, serialize_examples, write_corpus,
    write_schema,
};
pub use self::synthetic::{generate_synthetic, SyntheticCorpus, SyntheticSpec};

use crate::error::{Error, Result};
use crate::vocab::{CharVocab, WordVocab};

/// One annotated utterance.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub tokens: Vec<String>,
    pub domain: String,
    pub intent: String,
    pub slots: Vec<String>,
}

impl Example {
    pub fn new(
        tokens: Vec<String>,
        domain: impl Into<String>,
        intent: impl Into<String>,
        slots: Vec<String>,
    ) -> Result<Self> {
        let ex = Example {
            tokens,
            domain: domain.into(),
            intent: intent.into(),
            slots,
        };
        ex.validate().map_err(Error::Data)?;
        Ok(ex)
    }

    /// Check the structural invariants; returns a description on failure.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.tokens.is_empty() {
            return Err("empty token sequence".into());
        }
        if let Some(i) = self.tokens.iter().position(|t| t.is_empty()) {
            return Err(format!("empty token at index {i}"));
        }
        if self.domain.is_empty() {
            return Err("missing domain label".into());
        }
        if self.intent.is_empty() {
            return Err("missing intent label".into());
        }
        if self.slots.len() != self.tokens.len() {
            return Err(format!(
                "{} slot labels for {} tokens",
                self.slots.len(),
                self.tokens.len()
            ));
        }
        validate_bio(&self.slots).map_err(|v| v.to_string())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    /// Entity types mentioned by this example's slots.
    pub fn entity_types(&self) -> impl Iterator<Item = &str> {
        self.slots
            .iter()
            .filter_map(|s| BioTag::parse(s).and_then(|t| t.entity()))
    }
}

/// Label inventories of a corpus.
///
/// The joint model uses the flat unions; the per-domain maps drive the
/// Pipeline and OracleDomain variants and the synthetic generator.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSchema {
    pub domains: Vec<String>,
    pub intents: Vec<String>,
    pub entity_types: Vec<String>,
    pub domain_intents: BTreeMap<String, Vec<String>>,
    pub domain_entities: BTreeMap<String, Vec<String>>,
}

impl CorpusSchema {
    /// Sorted inventories of everything the examples use.
    pub fn infer(examples: &[Example]) -> Self {
        let mut domains = BTreeSet::new();
        let mut intents = BTreeSet::new();
        let mut entities = BTreeSet::new();
        let mut domain_intents: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut domain_entities: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for ex in examples {
            domains.insert(ex.domain.clone());
            intents.insert(ex.intent.clone());
            domain_intents
                .entry(ex.domain.clone())
                .or_default()
                .insert(ex.intent.clone());
            let de = domain_entities.entry(ex.domain.clone()).or_default();
            for e in ex.entity_types() {
                entities.insert(e.to_string());
                de.insert(e.to_string());
            }
        }
        CorpusSchema {
            domains: domains.into_iter().collect(),
            intents: intents.into_iter().collect(),
            entity_types: entities.into_iter().collect(),
            domain_intents: domain_intents
                .into_iter()
                .map(|(k, v)| (k, v.into_iter().collect()))
                .collect(),
            domain_entities: domain_entities
                .into_iter()
                .map(|(k, v)| (k, v.into_iter().collect()))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() || self.intents.is_empty() {
            return Err(Error::Data("schema has no domains or no intents".into()));
        }
        for d in self.domain_intents.keys().chain(self.domain_entities.keys()) {
            if !self.domains.contains(d) {
                return Err(Error::Data(format!("schema maps unknown domain `{d}`")));
            }
        }
        for (d, is) in &self.domain_intents {
            if let Some(i) = is.iter().find(|i| !self.intents.contains(i)) {
                return Err(Error::Data(format!("domain `{d}` lists unknown intent `{i}`")));
            }
        }
        for (d, es) in &self.domain_entities {
            if let Some(e) = es.iter().find(|e| !self.entity_types.contains(e)) {
                return Err(Error::Data(format!("domain `{d}` lists unknown entity type `{e}`")));
            }
        }
        Ok(())
    }

    /// Labels used by `ex` that this schema cannot resolve.
    pub fn unknown_labels(&self, ex: &Example) -> Vec<String> {
        let mut out = Vec::new();
        if !self.domains.contains(&ex.domain) {
            out.push(format!("domain `{}`", ex.domain));
        }
        if !self.intents.contains(&ex.intent) {
            out.push(format!("intent `{}`", ex.intent));
        }
        for e in ex.entity_types() {
            if !self.entity_types.iter().any(|x| x == e) {
                out.push(format!("entity type `{e}`"));
            }
        }
        out
    }

    pub fn intents_of(&self, domain: &str) -> &[String] {
        self.domain_intents
            .get(domain)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn entities_of(&self, domain: &str) -> &[String] {
        self.domain_entities
            .get(domain)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// True when no intent is listed under more than one domain.
    pub fn intents_disjoint(&self) -> bool {
        let mut seen = BTreeSet::new();
        self.domain_intents
            .values()
            .flatten()
            .all(|i| seen.insert(i.as_str()))
    }
}

/// Build character and word vocabularies from the training split.
///
/// Indices are assigned by first occurrence; index 0 is UNK in both.
/// Characters seen fewer than `min_char_count` times map to UNK.
pub fn build_vocab(train: &[Example], min_char_count: usize) -> Result<(CharVocab, WordVocab)> {
    if train.is_empty() {
        return Err(Error::Data("cannot build a vocabulary from an empty training set".into()));
    }
    let mut char_counts: Vec<(char, usize)> = Vec::new();
    let mut char_pos = std::collections::HashMap::new();
    let mut words = WordVocab::new();
    for ex in train {
        for tok in &ex.tokens {
            words.observe(tok);
            for c in tok.chars() {
                let i = *char_pos.entry(c).or_insert_with(|| {
                    char_counts.push((c, 0));
                    char_counts.len() - 1
                });
                char_counts[i].1 += 1;
            }
        }
    }
    let mut chars = CharVocab::new();
    for (c, n) in char_counts {
        if n >= min_char_count.max(1) {
            chars.insert(c);
        }
    }
    Ok((chars, words))
}

/// Group examples by gold domain, preserving order within each group.
pub fn split_by_domain(examples: &[Example]) -> BTreeMap<String, Vec<Example>> {
    let mut out: BTreeMap<String, Vec<Example>> = BTreeMap::new();
    for ex in examples {
        out.entry(ex.domain.clone()).or_default().push(ex.clone());
    }
    out
}
