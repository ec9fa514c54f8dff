//! Output layers rooted in the encoder states: sum-pooled softmax
//! classifiers for domain and intent, and a linear-chain CRF slot tagger.

use rand::Rng;

use crate::crf::{CrfScoreMode, CrfScores};
use crate::data::BioTag;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{Init, ParamId, ParameterStore, Partition};

/// BIO label inventory with a fixed index order: `O` first, then `B-e`,
/// `I-e` for each entity type in order. The internal START state has index
/// `len()`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagSet {
    entity_types: Vec<String>,
    labels: Vec<String>,
}

impl TagSet {
    pub fn new<S: AsRef<str>>(entity_types: &[S]) -> Result<Self> {
        let mut types: Vec<String> = Vec::with_capacity(entity_types.len());
        for e in entity_types {
            let e = e.as_ref();
            if e.is_empty() || e == "O" {
                return Err(Error::Data(format!("invalid entity type `{e}`")));
            }
            if types.iter().any(|t| t == e) {
                return Err(Error::Data(format!("duplicate entity type `{e}`")));
            }
            types.push(e.to_string());
        }
        let mut labels = vec!["O".to_string()];
        for e in &types {
            labels.push(format!("B-{e}"));
            labels.push(format!("I-{e}"));
        }
        Ok(TagSet {
            entity_types: types,
            labels,
        })
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn start(&self) -> usize {
        self.labels.len()
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        match BioTag::parse(label)? {
            BioTag::Outside => Some(0),
            BioTag::Begin(e) => self.entity_types.iter().position(|t| t == e).map(|k| 1 + 2 * k),
            BioTag::Inside(e) => self.entity_types.iter().position(|t| t == e).map(|k| 2 + 2 * k),
        }
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn encode<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                let l = l.as_ref();
                self.index(l)
                    .ok_or_else(|| Error::Data(format!("unknown slot label `{l}`")))
            })
            .collect()
    }

    pub fn decode(&self, indices: &[usize]) -> Vec<String> {
        indices.iter().map(|&i| self.labels[i].clone()).collect()
    }
}

/// Softmax classifier over the sum of the encoder states.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassifierHead {
    pub weight: ParamId,
    pub bias: ParamId,
    pub classes: usize,
}

impl ClassifierHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        prefix: &str,
        input_dim: usize,
        classes: usize,
        partition: Partition,
        rng: &mut R,
    ) -> Result<Self> {
        if classes == 0 {
            return Err(Error::Data(format!("{prefix} head needs at least one class")));
        }
        let weight = store.add(&format!("{prefix}.weight"), partition, classes, input_dim, Init::Xavier, rng)?;
        let bias = store.add(&format!("{prefix}.bias"), partition, classes, 1, Init::Zeros, rng)?;
        Ok(ClassifierHead {
            weight,
            bias,
            classes,
        })
    }

    pub fn from_store(store: &ParameterStore, prefix: &str) -> Result<Option<Self>> {
        let (Some(weight), Some(bias)) = (
            store.id(&format!("{prefix}.weight")),
            store.id(&format!("{prefix}.bias")),
        ) else {
            return Ok(None);
        };
        Ok(Some(ClassifierHead {
            weight,
            bias,
            classes: store.get(weight).rows(),
        }))
    }

    /// `g(Σ_i h_i)`.
    pub fn logits(&self, g: &mut Graph<'_>, h: &[NodeId]) -> Result<NodeId> {
        let pooled = g.sum(h)?;
        g.affine(self.weight, self.bias, pooled)
    }

    /// `-log softmax(logits)[gold]`.
    pub fn loss(&self, g: &mut Graph<'_>, logits: NodeId, gold: usize) -> Result<NodeId> {
        classification_loss(g, logits, gold)
    }
}

/// Negative log likelihood of `gold` under `softmax(logits)`.
pub fn classification_loss(g: &mut Graph<'_>, logits: NodeId, gold: usize) -> Result<NodeId> {
    if gold >= g.dim(logits) {
        return Err(Error::Contract(format!(
            "gold class {gold} out of range for {} classes",
            g.dim(logits)
        )));
    }
    let lse = g.log_sum_exp(logits)?;
    let picked = g.pick(logits, gold)?;
    let neg = g.negate(picked)?;
    g.add(lse, neg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CrfHead {
    /// `(L + 1) x L`, last row scores transitions out of START.
    pub transitions: ParamId,
    pub weight: ParamId,
    pub bias: ParamId,
    pub labels: usize,
    pub mode: CrfScoreMode,
}

impl CrfHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        input_dim: usize,
        labels: usize,
        mode: CrfScoreMode,
        rng: &mut R,
    ) -> Result<Self> {
        let transitions = store.add("slot.transitions", Partition::SlotHead, labels + 1, labels, Init::Xavier, rng)?;
        let weight = store.add("slot.weight", Partition::SlotHead, labels, input_dim, Init::Xavier, rng)?;
        let bias = store.add("slot.bias", Partition::SlotHead, labels, 1, Init::Zeros, rng)?;
        Ok(CrfHead {
            transitions,
            weight,
            bias,
            labels,
            mode,
        })
    }

    pub fn from_store(store: &ParameterStore, mode: CrfScoreMode) -> Result<Option<Self>> {
        let (Some(transitions), Some(weight), Some(bias)) = (
            store.id("slot.transitions"),
            store.id("slot.weight"),
            store.id("slot.bias"),
        ) else {
            return Ok(None);
        };
        Ok(Some(CrfHead {
            transitions,
            weight,
            bias,
            labels: store.get(weight).rows(),
            mode,
        }))
    }

    /// Per-position label scores `g^t(h_i)`.
    pub fn emissions(&self, g: &mut Graph<'_>, h: &[NodeId]) -> Result<Vec<NodeId>> {
        h.iter()
            .map(|&hi| g.affine(self.weight, self.bias, hi))
            .collect()
    }

    /// Forward-algorithm log partition as a graph node.
    pub fn log_partition(&self, g: &mut Graph<'_>, emissions: &[NodeId]) -> Result<NodeId> {
        if emissions.is_empty() {
            return Err(Error::Contract("CRF over an empty sentence".into()));
        }
        let t = g.parameter(self.transitions);
        let mut alpha = g.crf_step(None, emissions[0], t, self.mode)?;
        for &e in &emissions[1..] {
            alpha = g.crf_step(Some(alpha), e, t, self.mode)?;
        }
        g.log_sum_exp(alpha)
    }

    /// Score of a labeling as a graph node, with `y_0 = START`.
    pub fn sequence_score(&self, g: &mut Graph<'_>, emissions: &[NodeId], labels: &[usize]) -> Result<NodeId> {
        if labels.len() != emissions.len() || labels.is_empty() {
            return Err(Error::Contract(format!(
                "{} labels for {} positions",
                labels.len(),
                emissions.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.labels) {
            return Err(Error::Contract(format!("label index {bad} out of range (|L| = {})", self.labels)));
        }
        let mut terms = Vec::with_capacity(labels.len());
        let mut prev = self.labels;
        for (&e, &y) in emissions.iter().zip(labels) {
            let row = g.lookup(self.transitions, prev)?;
            let t = g.pick(row, y)?;
            let em = g.pick(e, y)?;
            terms.push(match self.mode {
                CrfScoreMode::Additive => g.add(t, em)?,
                CrfScoreMode::Multiplicative => g.mul(t, em)?,
            });
            prev = y;
        }
        g.sum(&terms)
    }

    /// `log Z - score(gold)`.
    pub fn loss(&self, g: &mut Graph<'_>, emissions: &[NodeId], gold: &[usize]) -> Result<NodeId> {
        let log_z = self.log_partition(g, emissions)?;
        let score = self.sequence_score(g, emissions, gold)?;
        let neg = g.negate(score)?;
        g.add(log_z, neg)
    }

    /// Best labeling given evaluated emission nodes.
    pub fn decode(&self, g: &Graph<'_>, emissions: &[NodeId]) -> Result<Vec<usize>> {
        let em: Vec<Vec<f64>> = emissions.iter().map(|&e| g.value(e).to_vec()).collect();
        let crf = CrfScores::new(&em, g.store().data(self.transitions), self.mode)?;
        Ok(crf.viterbi().0)
    }
}
