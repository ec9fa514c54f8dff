//! Joint loss, per-utterance Adam, and the curriculum schedule.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{split_by_domain, CorpusSchema, Example};
use crate::embedding::apply_pretrained;
use crate::error::{Error, Result};
use crate::eval::{score_model, Metrics, ModelSet, Variant};
use crate::graph::{Graph, NodeId};
use crate::model::{HeadSet, LabelSpace, ModelConfig, Noise, OneNet};
use crate::params::{Gradients, ParameterStore, Partition};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub dropout_keep: f64,
    /// Epochs for DomainOnly, IntentOnly, DomainPlusIntent, AllThree.
    pub stage_epochs: [usize; 4],
    /// Epoch budget of each single-task network in the baseline variants.
    pub single_task_epochs: usize,
    pub seed: u64,
    /// Final-stage epochs without tuning improvement before stopping.
    pub patience: usize,
    pub unk_prob: f64,
    pub clip_norm: Option<f64>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            dropout_keep: 0.4,
            stage_epochs: [3, 3, 3, 20],
            single_task_epochs: 20,
            seed: 1,
            patience: 5,
            unk_prob: 0.1,
            clip_norm: None,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return bad("dropout_keep must be in (0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.beta1 > 0.0 && self.beta2 > 0.0 && self.epsilon > 0.0) {
            return bad("Adam constants must be positive");
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return bad("Adam betas must be below 1");
        }
        if !(0.0..=1.0).contains(&self.unk_prob) {
            return bad("unk_prob must be in [0, 1]");
        }
        if self.stage_epochs[3] == 0 {
            return bad("the final curriculum stage needs at least one epoch");
        }
        if self.single_task_epochs == 0 {
            return bad("single_task_epochs must be positive");
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad("clip_norm must be positive");
            }
        }
        Ok(())
    }

    fn noise(&self) -> Noise {
        Noise {
            dropout_keep: self.dropout_keep,
            unk_prob: self.unk_prob,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurriculumStage {
    DomainOnly,
    IntentOnly,
    DomainPlusIntent,
    AllThree,
}

impl CurriculumStage {
    pub const ORDER: [CurriculumStage; 4] = [
        CurriculumStage::DomainOnly,
        CurriculumStage::IntentOnly,
        CurriculumStage::DomainPlusIntent,
        CurriculumStage::AllThree,
    ];

    pub fn terms(self) -> HeadSet {
        match self {
            CurriculumStage::DomainOnly => HeadSet::DOMAIN,
            CurriculumStage::IntentOnly => HeadSet::INTENT,
            CurriculumStage::DomainPlusIntent => HeadSet {
                domain: true,
                intent: true,
                slot: false,
            },
            CurriculumStage::AllThree => HeadSet::ALL,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CurriculumStage::DomainOnly => "domain-only",
            CurriculumStage::IntentOnly => "intent-only",
            CurriculumStage::DomainPlusIntent => "domain-plus-intent",
            CurriculumStage::AllThree => "all-three",
        }
    }
}

impl fmt::Display for CurriculumStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Loss nodes of one utterance. Inactive terms are `None`.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: NodeId,
    pub domain: Option<NodeId>,
    pub intent: Option<NodeId>,
    pub slot: Option<NodeId>,
}

/// Sum of the active loss terms for `stage`, all built on one encoder pass.
pub fn joint_loss<R: Rng + ?Sized>(
    model: &OneNet,
    g: &mut Graph<'_>,
    example: &Example,
    stage: CurriculumStage,
    noise: Noise,
    rng: &mut R,
) -> Result<LossNodes> {
    let active = stage.terms().intersect(model.heads());
    if active.is_empty() {
        return Err(Error::Contract(format!("stage {stage} has no active loss term for this network")));
    }
    let gold_domain = if active.domain { Some(model.domain_index(&example.domain)?) } else { None };
    let gold_intent = if active.intent { Some(model.intent_index(&example.intent)?) } else { None };
    let gold_slots = if active.slot { Some(model.tags.encode(&example.slots)?) } else { None };
    let nodes = model.build(g, &example.tokens, active, noise, rng)?;
    let mut terms = Vec::with_capacity(3);
    let domain = match (nodes.domain_logits, gold_domain) {
        (Some(l), Some(y)) => Some(model.domain_head.expect("present").loss(g, l, y)?),
        _ => None,
    };
    let intent = match (nodes.intent_logits, gold_intent) {
        (Some(l), Some(y)) => Some(model.intent_head.expect("present").loss(g, l, y)?),
        _ => None,
    };
    let slot = match (&nodes.emissions, &gold_slots) {
        (Some(e), Some(y)) => Some(model.slot_head.expect("present").loss(g, e, y)?),
        _ => None,
    };
    terms.extend(domain);
    terms.extend(intent);
    terms.extend(slot);
    let total = if terms.len() == 1 { terms[0] } else { g.sum(&terms)? };
    Ok(LossNodes {
        total,
        domain,
        intent,
        slot,
    })
}

/// Adam moments plus a global step counter.
///
/// Each tensor also counts its own updates, which is what bias correction
/// uses, so a head that sat frozen through earlier stages starts with a
/// correctly corrected first step.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub tensor_steps: Vec<u64>,
}

impl AdamState {
    pub fn new(store: &ParameterStore) -> Self {
        AdamState {
            m: store.iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
            v: store.iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
            t: 0,
            tensor_steps: vec![0; store.len()],
        }
    }
}

/// One bias-corrected Adam update of every tensor whose partition is in
/// `active`. Other tensors and their moments are left untouched.
pub fn adam_step(
    store: &mut ParameterStore,
    grads: &mut Gradients,
    state: &mut AdamState,
    hyper: &Hyperparams,
    active: &[Partition],
) -> Result<()> {
    if state.m.len() != store.len() || grads.len() != store.len() {
        return Err(Error::Contract("optimizer state does not match the parameter store".into()));
    }
    for (id, t) in store.iter() {
        if !active.contains(&t.partition()) {
            continue;
        }
        if grads.get(id).iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {}", t.name())));
        }
    }
    if let Some(c) = hyper.clip_norm {
        let norm = grads.global_norm();
        if norm > c {
            grads.scale(c / norm);
        }
    }
    state.t += 1;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if !active.contains(&store.get(id).partition()) {
            continue;
        }
        let k = id.index();
        state.tensor_steps[k] += 1;
        let step = state.tensor_steps[k] as i32;
        let c1 = 1.0 - hyper.beta1.powi(step);
        let c2 = 1.0 - hyper.beta2.powi(step);
        let (b1, b2, lr, eps) = (hyper.beta1, hyper.beta2, hyper.learning_rate, hyper.epsilon);
        let g = grads.get(id);
        let p = store.data_mut(id);
        let moments = state.m[k].iter_mut().zip(state.v[k].iter_mut());
        for ((p, (m, v)), &g) in p.iter_mut().zip(moments).zip(g) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: CurriculumStage,
    /// 1-based within the stage.
    pub epoch: usize,
    pub mean_loss: f64,
    pub tune: Metrics,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Final-stage epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn stages(&self) -> Vec<CurriculumStage> {
        let mut out: Vec<CurriculumStage> = Vec::new();
        for r in &self.epochs {
            if out.last() != Some(&r.stage) {
                out.push(r.stage);
            }
        }
        out
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        let e = self.best_epoch?;
        self.epochs
            .iter()
            .find(|r| r.stage == CurriculumStage::AllThree && r.epoch == e)
    }
}

/// Selection key: slot F1, then intent accuracy, then domain accuracy.
fn selection_key(m: &Metrics) -> [f64; 3] {
    [
        m.slot_f1.unwrap_or(0.0),
        m.intent_accuracy.unwrap_or(0.0),
        m.domain_accuracy.unwrap_or(0.0),
    ]
}

fn improves(a: [f64; 3], b: [f64; 3]) -> bool {
    for (x, y) in a.iter().zip(&b) {
        if x > y {
            return true;
        }
        if x < y {
            return false;
        }
    }
    false
}

/// Train `model` in place through the curriculum. Stages with no epochs or
/// no head on this network are skipped. The final stage keeps the best
/// tuning epoch and stops after `patience` epochs without improvement.
pub fn train_curriculum(
    model: &mut OneNet,
    train: &[Example],
    tune: &[Example],
    hyper: &Hyperparams,
) -> Result<TrainLog> {
    train_curriculum_with(model, train, tune, hyper, &mut |_| {})
}

pub fn train_curriculum_with(
    model: &mut OneNet,
    train: &[Example],
    tune: &[Example],
    hyper: &Hyperparams,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainLog> {
    hyper.validate()?;
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(hyper.seed, "order"));
    let mut adam = AdamState::new(&model.store);
    let mut grads = Gradients::zeros_like(&model.store);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainLog::default();
    let mut best: Option<([f64; 3], ParameterStore)> = None;
    let noise = hyper.noise();

    for (stage, &epochs) in CurriculumStage::ORDER.iter().zip(&hyper.stage_epochs) {
        let stage = *stage;
        let active = stage.terms().intersect(model.heads());
        if epochs == 0 || active.is_empty() {
            continue;
        }
        let partitions = active.partitions();
        let mut since_best = 0;
        for epoch in 1..=epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for &i in &order {
                let graph_seed = rng.gen::<u64>();
                let loss = {
                    let mut g = Graph::new(&model.store, graph_seed);
                    let nodes = joint_loss(model, &mut g, &train[i], stage, noise, &mut rng)?;
                    g.forward()?;
                    let loss = g.scalar(nodes.total);
                    if !loss.is_finite() {
                        return Err(Error::Divergence {
                            stage: stage.to_string(),
                            epoch,
                            detail: format!("non-finite loss on training example {}", i + 1),
                        });
                    }
                    g.backward(nodes.total)?;
                    grads.clear();
                    g.accumulate_gradients(&mut grads)?;
                    loss
                };
                adam_step(&mut model.store, &mut grads, &mut adam, hyper, &partitions).map_err(|e| {
                    Error::Divergence {
                        stage: stage.to_string(),
                        epoch,
                        detail: e.to_string(),
                    }
                })?;
                total += loss;
            }
            let tune_metrics = if tune.is_empty() {
                Metrics::default()
            } else {
                score_model(model, tune)?
            };
            let record = EpochRecord {
                stage,
                epoch,
                mean_loss: total / train.len() as f64,
                tune: tune_metrics,
            };
            observer(&record);
            if stage == CurriculumStage::AllThree {
                let key = selection_key(&record.tune);
                if tune.is_empty() || best.as_ref().map_or(true, |(b, _)| improves(key, *b)) {
                    best = Some((key, model.store.clone()));
                    log.best_epoch = Some(epoch);
                    since_best = 0;
                } else {
                    since_best += 1;
                }
            }
            log.epochs.push(record);
            if stage == CurriculumStage::AllThree && since_best >= hyper.patience && epoch < epochs {
                log.stopped_early = true;
                break;
            }
        }
    }
    if let Some((_, store)) = best {
        model.store = store;
    }
    Ok(log)
}

/// Everything the variant trainers share.
#[derive(Clone, Copy, Debug)]
pub struct TrainSetup<'a> {
    pub config: &'a ModelConfig,
    pub hyper: &'a Hyperparams,
    /// Word vectors copied into matching vocabulary rows before training.
    pub pretrained: Option<&'a [(String, Vec<f64>)]>,
}

impl<'a> TrainSetup<'a> {
    pub fn new(config: &'a ModelConfig, hyper: &'a Hyperparams) -> Self {
        TrainSetup {
            config,
            hyper,
            pretrained: None,
        }
    }

    fn fresh(&self, heads: HeadSet, labels: LabelSpace, train: &[Example], role: &str) -> Result<OneNet> {
        let config = ModelConfig { heads, ..*self.config };
        let mut model = OneNet::for_corpus(config, train, labels, derive_seed(self.hyper.seed, role))?;
        if let Some(vectors) = self.pretrained {
            let embedding = model.embedding;
            apply_pretrained(&mut model.store, &embedding, &mut model.words, vectors)?;
        }
        Ok(model)
    }
}

/// Train a network carrying only the heads in `heads`, with a plain
/// single-stage schedule of `single_task_epochs`.
pub fn train_single_task(
    setup: &TrainSetup<'_>,
    heads: HeadSet,
    labels: LabelSpace,
    train: &[Example],
    tune: &[Example],
    role: &str,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<(OneNet, TrainLog)> {
    let mut model = setup.fresh(heads, labels, train, role)?;
    let h = Hyperparams {
        stage_epochs: [0, 0, 0, setup.hyper.single_task_epochs],
        seed: derive_seed(setup.hyper.seed, &format!("{role}/train")),
        ..setup.hyper.clone()
    };
    let log = train_curriculum_with(&mut model, train, tune, &h, observer)?;
    Ok((model, log))
}

/// Train the joint network with the full curriculum.
pub fn train_joint(
    setup: &TrainSetup<'_>,
    schema: &CorpusSchema,
    train: &[Example],
    tune: &[Example],
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<(OneNet, TrainLog)> {
    let mut model = setup.fresh(HeadSet::ALL, labels_of(schema), train, "joint")?;
    let log = train_curriculum_with(&mut model, train, tune, setup.hyper, observer)?;
    Ok((model, log))
}

pub fn labels_of(schema: &CorpusSchema) -> LabelSpace {
    LabelSpace {
        domains: schema.domains.clone(),
        intents: schema.intents.clone(),
        entity_types: schema.entity_types.clone(),
    }
}

/// Which networks to train.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Roles {
    pub joint: bool,
    pub flat_domain: bool,
    pub flat_intent: bool,
    pub flat_slot: bool,
    pub per_domain: bool,
}

impl Roles {
    pub fn for_variant(variant: Variant) -> Self {
        match variant {
            Variant::Joint => Roles {
                joint: true,
                ..Roles::default()
            },
            Variant::Independent => Roles {
                flat_domain: true,
                flat_intent: true,
                flat_slot: true,
                ..Roles::default()
            },
            Variant::Pipeline => Roles {
                flat_domain: true,
                per_domain: true,
                ..Roles::default()
            },
            Variant::OracleDomain => Roles {
                per_domain: true,
                ..Roles::default()
            },
        }
    }

    pub fn union(self, o: Roles) -> Roles {
        Roles {
            joint: self.joint || o.joint,
            flat_domain: self.flat_domain || o.flat_domain,
            flat_intent: self.flat_intent || o.flat_intent,
            flat_slot: self.flat_slot || o.flat_slot,
            per_domain: self.per_domain || o.per_domain,
        }
    }

    pub fn all() -> Roles {
        Variant::ALL
            .iter()
            .fold(Roles::default(), |acc, &v| acc.union(Roles::for_variant(v)))
    }
}

/// Train every network `variant` needs.
pub fn train_variant(
    variant: Variant,
    setup: &TrainSetup<'_>,
    schema: &CorpusSchema,
    train: &[Example],
    tune: &[Example],
    observer: &mut dyn FnMut(&str, &EpochRecord),
) -> Result<(ModelSet, BTreeMap<String, TrainLog>)> {
    train_roles(Roles::for_variant(variant), setup, schema, train, tune, observer)
}

/// Train the selected networks. `observer` sees each network's role name
/// along with its epoch records.
pub fn train_roles(
    roles: Roles,
    setup: &TrainSetup<'_>,
    schema: &CorpusSchema,
    train: &[Example],
    tune: &[Example],
    observer: &mut dyn FnMut(&str, &EpochRecord),
) -> Result<(ModelSet, BTreeMap<String, TrainLog>)> {
    let mut set = ModelSet::default();
    let mut logs = BTreeMap::new();
    let flat = labels_of(schema);
    if roles.joint {
        let (m, log) = train_joint(setup, schema, train, tune, &mut |r| observer("joint", r))?;
        set.joint = Some(m);
        logs.insert("joint".to_string(), log);
    }
    let singles = [
        (roles.flat_domain, "domain", HeadSet::DOMAIN),
        (roles.flat_intent, "intent", HeadSet::INTENT),
        (roles.flat_slot, "slot", HeadSet::SLOT),
    ];
    for (wanted, role, heads) in singles {
        if !wanted {
            continue;
        }
        let (m, log) = train_single_task(setup, heads, flat.clone(), train, tune, role, &mut |r| observer(role, r))?;
        set.insert_role(role, m)?;
        logs.insert(role.to_string(), log);
    }
    if roles.per_domain {
        let train_by = split_by_domain(train);
        let tune_by = split_by_domain(tune);
        for d in &schema.domains {
            let dtrain = train_by
                .get(d)
                .ok_or_else(|| Error::Data(format!("no training examples for domain `{d}`")))?;
            let dtune = tune_by.get(d).map(Vec::as_slice).unwrap_or(&[]);
            let labels = LabelSpace {
                domains: vec![d.clone()],
                intents: schema.intents_of(d).to_vec(),
                entity_types: schema.entities_of(d).to_vec(),
            };
            for (kind, heads) in [("intent", HeadSet::INTENT), ("slot", HeadSet::SLOT)] {
                let role = format!("{kind}.{d}");
                let (m, log) = train_single_task(setup, heads, labels.clone(), dtrain, dtune, &role, &mut |r| {
                    observer(&role, r)
                })?;
                set.insert_role(&role, m)?;
                logs.insert(role, log);
            }
        }
    }
    Ok((set, logs))
}

/// Deterministic seed for a named sub-task of a run.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, folded into the run seed with a SplitMix64 round.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
