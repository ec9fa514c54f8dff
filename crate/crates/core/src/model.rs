//! The OneNet network: embedding layer, shared BiLSTM encoder and any subset
//! of the three heads.
//!
//! The single-task networks used by the baseline variants are the same type
//! with only one head enabled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crf::CrfScoreMode;
use crate::data::{build_vocab, Example};
use crate::embedding::EmbeddingParams;
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::heads::{ClassifierHead, CrfHead, TagSet};
use crate::params::{ParameterStore, Partition};
use crate::vocab::{CharVocab, WordVocab, UNK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub char_dim: usize,
    pub char_hidden: usize,
    pub word_dim: usize,
    pub word_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            char_dim: 25,
            char_hidden: 25,
            word_dim: 100,
            word_hidden: 100,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.char_dim == 0 || self.char_hidden == 0 || self.word_dim == 0 || self.word_hidden == 0 {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Which output layers a network carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSet {
    pub domain: bool,
    pub intent: bool,
    pub slot: bool,
}

impl HeadSet {
    pub const ALL: HeadSet = HeadSet {
        domain: true,
        intent: true,
        slot: true,
    };
    pub const DOMAIN: HeadSet = HeadSet {
        domain: true,
        intent: false,
        slot: false,
    };
    pub const INTENT: HeadSet = HeadSet {
        domain: false,
        intent: true,
        slot: false,
    };
    pub const SLOT: HeadSet = HeadSet {
        domain: false,
        intent: false,
        slot: true,
    };

    pub fn intersect(self, other: HeadSet) -> HeadSet {
        HeadSet {
            domain: self.domain && other.domain,
            intent: self.intent && other.intent,
            slot: self.slot && other.slot,
        }
    }

    pub fn is_empty(self) -> bool {
        !(self.domain || self.intent || self.slot)
    }

    pub fn partitions(self) -> Vec<Partition> {
        let mut out = vec![Partition::Shared];
        if self.domain {
            out.push(Partition::DomainHead);
        }
        if self.intent {
            out.push(Partition::IntentHead);
        }
        if self.slot {
            out.push(Partition::SlotHead);
        }
        out
    }
}

impl Default for HeadSet {
    fn default() -> Self {
        HeadSet::ALL
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dims: ModelDims,
    pub use_chars: bool,
    pub crf_score: CrfScoreMode,
    pub lowercase_fallback: bool,
    pub heads: HeadSet,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dims: ModelDims::default(),
            use_chars: true,
            crf_score: CrfScoreMode::Additive,
            lowercase_fallback: true,
            heads: HeadSet::ALL,
        }
    }
}

/// Label inventories a network predicts over.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub domains: Vec<String>,
    pub intents: Vec<String>,
    pub entity_types: Vec<String>,
}

/// Training-time perturbations of one forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Noise {
    pub dropout_keep: f64,
    /// Probability of replacing a singleton training word by UNK.
    pub unk_prob: f64,
}

impl Noise {
    pub const NONE: Noise = Noise {
        dropout_keep: 1.0,
        unk_prob: 0.0,
    };
}

/// Graph nodes produced by one pass over an utterance.
#[derive(Clone, Debug, Default)]
pub struct HeadNodes {
    pub encoded: Vec<NodeId>,
    pub domain_logits: Option<NodeId>,
    pub intent_logits: Option<NodeId>,
    pub emissions: Option<Vec<NodeId>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slots: Option<Vec<String>>,
}

#[derive(Clone, Debug)]
pub struct OneNet {
    pub config: ModelConfig,
    pub chars: CharVocab,
    pub words: WordVocab,
    pub labels: LabelSpace,
    pub tags: TagSet,
    pub store: ParameterStore,
    pub embedding: EmbeddingParams,
    pub encoder: EncoderParams,
    pub domain_head: Option<ClassifierHead>,
    pub intent_head: Option<ClassifierHead>,
    pub slot_head: Option<CrfHead>,
}

impl OneNet {
    /// Fresh network with parameters drawn from `seed`.
    pub fn new(
        config: ModelConfig,
        chars: CharVocab,
        words: WordVocab,
        labels: LabelSpace,
        seed: u64,
    ) -> Result<Self> {
        config.dims.validate()?;
        if config.heads.is_empty() {
            return Err(Error::Config("a network needs at least one head".into()));
        }
        let tags = TagSet::new(&labels.entity_types)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let d = config.dims;
        let embedding = EmbeddingParams::new(
            &mut store,
            &chars,
            &words,
            d.char_dim,
            d.char_hidden,
            d.word_dim,
            config.use_chars,
            &mut rng,
        )?;
        let encoder = EncoderParams::new(&mut store, embedding.output_dim(), d.word_hidden, &mut rng)?;
        let h = encoder.output_dim();
        let domain_head = if config.heads.domain {
            Some(ClassifierHead::new(&mut store, "domain", h, labels.domains.len(), Partition::DomainHead, &mut rng)?)
        } else {
            None
        };
        let intent_head = if config.heads.intent {
            Some(ClassifierHead::new(&mut store, "intent", h, labels.intents.len(), Partition::IntentHead, &mut rng)?)
        } else {
            None
        };
        let slot_head = if config.heads.slot {
            Some(CrfHead::new(&mut store, h, tags.len(), config.crf_score, &mut rng)?)
        } else {
            None
        };
        Ok(OneNet {
            config,
            chars,
            words,
            labels,
            tags,
            store,
            embedding,
            encoder,
            domain_head,
            intent_head,
            slot_head,
        })
    }

    /// Network whose vocabularies come from `train` and whose label space is
    /// `labels`.
    pub fn for_corpus(config: ModelConfig, train: &[Example], labels: LabelSpace, seed: u64) -> Result<Self> {
        let (chars, words) = build_vocab(train, 1)?;
        OneNet::new(config, chars, words, labels, seed)
    }

    /// Rebuild head and layer handles from a loaded parameter store.
    pub fn from_parts(
        config: ModelConfig,
        chars: CharVocab,
        words: WordVocab,
        labels: LabelSpace,
        store: ParameterStore,
    ) -> Result<Self> {
        let tags = TagSet::new(&labels.entity_types)?;
        let embedding = EmbeddingParams::from_store(&store)?;
        let encoder = EncoderParams::from_store(&store)?;
        let domain_head = ClassifierHead::from_store(&store, "domain")?;
        let intent_head = ClassifierHead::from_store(&store, "intent")?;
        let slot_head = CrfHead::from_store(&store, config.crf_score)?;
        let check = |present: bool, wanted: bool, what: &str| {
            if present != wanted {
                Err(Error::Checkpoint(format!("{what} head presence does not match the config")))
            } else {
                Ok(())
            }
        };
        check(domain_head.is_some(), config.heads.domain, "domain")?;
        check(intent_head.is_some(), config.heads.intent, "intent")?;
        check(slot_head.is_some(), config.heads.slot, "slot")?;
        if embedding.chars.is_some() != config.use_chars {
            return Err(Error::Checkpoint("char encoder presence does not match the config".into()));
        }
        if store.get(embedding.words).rows() != words.len() {
            return Err(Error::Checkpoint("word table rows do not match the vocabulary".into()));
        }
        if let Some(c) = embedding.chars {
            if store.get(c.table).rows() != chars.len() {
                return Err(Error::Checkpoint("char table rows do not match the vocabulary".into()));
            }
        }
        let sized = |head: Option<ClassifierHead>, n: usize, what: &str| match head {
            Some(h) if h.classes != n => Err(Error::Checkpoint(format!(
                "{what} head has {} classes but the label space has {n}",
                h.classes
            ))),
            _ => Ok(()),
        };
        sized(domain_head, labels.domains.len(), "domain")?;
        sized(intent_head, labels.intents.len(), "intent")?;
        if let Some(s) = slot_head {
            if s.labels != tags.len() {
                return Err(Error::Checkpoint("slot head size does not match the tag set".into()));
            }
        }
        Ok(OneNet {
            config,
            chars,
            words,
            labels,
            tags,
            store,
            embedding,
            encoder,
            domain_head,
            intent_head,
            slot_head,
        })
    }

    pub fn heads(&self) -> HeadSet {
        HeadSet {
            domain: self.domain_head.is_some(),
            intent: self.intent_head.is_some(),
            slot: self.slot_head.is_some(),
        }
    }

    /// Word-table row for `word` at inference time.
    pub fn word_row(&self, word: &str) -> usize {
        self.words.lookup(word, self.config.lowercase_fallback)
    }

    /// `v_i` for one token.
    pub fn embed_word(&self, g: &mut Graph<'_>, word: &str) -> Result<NodeId> {
        self.embedding.embed_word(g, &self.chars, word, self.word_row(word))
    }

    /// `v_1 .. v_n`.
    pub fn embed_utterance<S: AsRef<str>>(&self, g: &mut Graph<'_>, tokens: &[S]) -> Result<Vec<NodeId>> {
        if tokens.is_empty() {
            return Err(Error::Contract("cannot embed an empty utterance".into()));
        }
        tokens.iter().map(|t| self.embed_word(g, t.as_ref())).collect()
    }

    /// Embed, encode once, and attach every head in `wanted` that the network
    /// has. `rng` supplies UNK replacement when `noise.unk_prob > 0`.
    pub fn build<S: AsRef<str>, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'_>,
        tokens: &[S],
        wanted: HeadSet,
        noise: Noise,
        rng: &mut R,
    ) -> Result<HeadNodes> {
        if tokens.is_empty() {
            return Err(Error::Contract("cannot encode an empty utterance".into()));
        }
        let mut v = Vec::with_capacity(tokens.len());
        for t in tokens {
            let t = t.as_ref();
            let mut row = self.word_row(t);
            if noise.unk_prob > 0.0 && row != UNK && self.words.is_singleton(row) && rng.gen::<f64>() < noise.unk_prob {
                row = UNK;
            }
            let vi = self.embedding.embed_word(g, &self.chars, t, row)?;
            v.push(self.maybe_dropout(g, vi, noise.dropout_keep)?);
        }
        let encoded = self.encoder.encode(g, &v)?;
        let h = encoded
            .iter()
            .map(|&hi| self.maybe_dropout(g, hi, noise.dropout_keep))
            .collect::<Result<Vec<_>>>()?;
        let active = wanted.intersect(self.heads());
        let mut out = HeadNodes {
            encoded,
            ..HeadNodes::default()
        };
        if active.domain {
            out.domain_logits = Some(self.domain_head.expect("present").logits(g, &h)?);
        }
        if active.intent {
            out.intent_logits = Some(self.intent_head.expect("present").logits(g, &h)?);
        }
        if active.slot {
            out.emissions = Some(self.slot_head.expect("present").emissions(g, &h)?);
        }
        Ok(out)
    }

    fn maybe_dropout(&self, g: &mut Graph<'_>, x: NodeId, keep: f64) -> Result<NodeId> {
        if keep < 1.0 {
            g.dropout(x, keep)
        } else {
            Ok(x)
        }
    }

    pub fn domain_index(&self, domain: &str) -> Result<usize> {
        self.labels
            .domains
            .iter()
            .position(|d| d == domain)
            .ok_or_else(|| Error::Data(format!("unknown domain `{domain}`")))
    }

    pub fn intent_index(&self, intent: &str) -> Result<usize> {
        self.labels
            .intents
            .iter()
            .position(|d| d == intent)
            .ok_or_else(|| Error::Data(format!("unknown intent `{intent}`")))
    }

    /// Decode every head the network has.
    pub fn predict<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Prediction> {
        let mut g = Graph::new(&self.store, 0);
        let nodes = self.build(&mut g, tokens, HeadSet::ALL, Noise::NONE, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        g.forward()?;
        let argmax = |v: &[f64]| {
            let mut best = 0;
            for (i, &x) in v.iter().enumerate() {
                if x > v[best] {
                    best = i;
                }
            }
            best
        };
        Ok(Prediction {
            domain: nodes
                .domain_logits
                .map(|l| self.labels.domains[argmax(g.value(l))].clone()),
            intent: nodes
                .intent_logits
                .map(|l| self.labels.intents[argmax(g.value(l))].clone()),
            slots: match &nodes.emissions {
                Some(e) => {
                    let path = self.slot_head.expect("present").decode(&g, e)?;
                    Some(self.tags.decode(&path))
                }
                None => None,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::OpKind;

    fn tiny() -> OneNet {
        let ex = vec![Example::new(
            vec!["wake".into(), "me".into(), "at".into(), "7".into()],
            "alarm",
            "set_alarm",
            vec!["O".into(), "O".into(), "O".into(), "B-time".into()],
        )
        .unwrap()];
        let labels = LabelSpace {
            domains: vec!["alarm".into(), "calendar".into()],
            intents: vec!["set_alarm".into(), "add_event".into()],
            entity_types: vec!["time".into()],
        };
        let config = ModelConfig {
            dims: ModelDims {
                char_dim: 3,
                char_hidden: 4,
                word_dim: 5,
                word_hidden: 6,
            },
            ..ModelConfig::default()
        };
        OneNet::for_corpus(config, &ex, labels, 1).unwrap()
    }

    #[test]
    fn default_dims_give_150_and_200_wide_states() {
        let d = ModelDims::default();
        assert_eq!(2 * d.char_hidden + d.word_dim, 150);
        assert_eq!(2 * d.word_hidden, 200);
    }

    #[test]
    fn one_encoder_pass_feeds_all_heads() {
        let net = tiny();
        let mut g = Graph::new(&net.store, 0);
        let nodes = net
            .build(&mut g, &["wake", "me"], HeadSet::ALL, Noise::NONE, &mut rand::thread_rng())
            .unwrap();
        assert_eq!(g.count_uses(net.encoder.forward.weights), 2);
        assert_eq!(g.count_uses(net.encoder.backward.weights), 2);
        let word_steps = 2 * 2;
        let char_steps = 2 * ("wake".len() + "me".len());
        assert_eq!(g.count(OpKind::Tanh), 2 * (word_steps + char_steps));
        assert!(nodes.domain_logits.is_some() && nodes.intent_logits.is_some());
        assert_eq!(nodes.emissions.unwrap().len(), 2);
    }

    #[test]
    fn predict_outputs_known_labels() {
        let net = tiny();
        let p = net.predict(&["wake", "me", "at", "9"]).unwrap();
        assert!(net.labels.domains.contains(p.domain.as_ref().unwrap()));
        assert!(net.labels.intents.contains(p.intent.as_ref().unwrap()));
        assert_eq!(p.slots.unwrap().len(), 4);
        assert!(net.predict::<&str>(&[]).is_err());
    }
}
