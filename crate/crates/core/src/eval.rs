//! Metrics, model variants and per-domain reporting.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{repair_bio, BioTag, Example};
use crate::error::{Error, Result};
use crate::model::{OneNet, Prediction};

/// A typed span `[start, end)`.
pub type Chunk = (String, usize, usize);

/// Spans of a BIO labeling. An `I-e` that does not continue an `e` span
/// opens a new one, which is the same as repairing it to `B-e` first.
pub fn extract_chunks<S: AsRef<str>>(labels: &[S]) -> Vec<Chunk> {
    let mut out: Vec<Chunk> = Vec::new();
    let mut open: Option<(&str, usize)> = None;
    for (i, l) in labels.iter().enumerate() {
        let tag = BioTag::parse(l.as_ref()).unwrap_or(BioTag::Outside);
        let cont = match (&tag, open) {
            (BioTag::Inside(e), Some((o, _))) => *e == o,
            _ => false,
        };
        if cont {
            continue;
        }
        if let Some((e, s)) = open.take() {
            out.push((e.to_string(), s, i));
        }
        match tag {
            BioTag::Begin(e) | BioTag::Inside(e) => open = Some((e, i)),
            BioTag::Outside => {}
        }
    }
    if let Some((e, s)) = open {
        out.push((e.to_string(), s, labels.len()));
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl SlotScore {
    pub fn from_counts(correct: usize, predicted: usize, gold: usize) -> Self {
        let pct = |a: usize, b: usize| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
        let precision = pct(correct, predicted);
        let recall = pct(correct, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        SlotScore {
            precision,
            recall,
            f1,
            correct,
            predicted,
            gold,
        }
    }
}

/// Exact (type, start, end) matches between two labelings.
fn chunk_counts<S: AsRef<str>, T: AsRef<str>>(gold: &[S], pred: &[T]) -> (usize, usize, usize) {
    let g = extract_chunks(&repair_bio(gold));
    let p = extract_chunks(&repair_bio(pred));
    let correct = p.iter().filter(|c| g.contains(c)).count();
    (correct, p.len(), g.len())
}

/// Micro-averaged chunk precision, recall and F1 in percent.
pub fn slot_f1<S: AsRef<str>, T: AsRef<str>>(gold: &[Vec<S>], predicted: &[Vec<T>]) -> Result<SlotScore> {
    if gold.len() != predicted.len() {
        return Err(Error::Contract(format!(
            "{} gold labelings but {} predicted",
            gold.len(),
            predicted.len()
        )));
    }
    let (mut c, mut p, mut g) = (0, 0, 0);
    for (i, (gs, ps)) in gold.iter().zip(predicted).enumerate() {
        if gs.len() != ps.len() {
            return Err(Error::Contract(format!(
                "labeling {} has {} gold and {} predicted labels",
                i + 1,
                gs.len(),
                ps.len()
            )));
        }
        let (a, b, d) = chunk_counts(gs, ps);
        c += a;
        p += b;
        g += d;
    }
    Ok(SlotScore::from_counts(c, p, g))
}

/// Metrics of one bucket. A metric is `None` when no prediction for that
/// task was made.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub examples: usize,
    pub domain_accuracy: Option<f64>,
    pub intent_accuracy: Option<f64>,
    pub slot_precision: Option<f64>,
    pub slot_recall: Option<f64>,
    pub slot_f1: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default)]
struct Tally {
    n: usize,
    domain: Option<usize>,
    intent: Option<usize>,
    slot: Option<(usize, usize, usize)>,
}

fn bump(acc: &mut Option<usize>, hit: bool) {
    *acc.get_or_insert(0) += hit as usize;
}

impl Tally {
    fn add(&mut self, gold: &Example, pred: &Prediction) -> Result<()> {
        self.n += 1;
        if let Some(d) = &pred.domain {
            bump(&mut self.domain, *d == gold.domain);
        }
        if let Some(i) = &pred.intent {
            bump(&mut self.intent, *i == gold.intent);
        }
        if let Some(s) = &pred.slots {
            if s.len() != gold.slots.len() {
                return Err(Error::Contract(format!(
                    "prediction for `{}` has {} slot labels",
                    gold.text(),
                    s.len()
                )));
            }
            let (c, p, g) = chunk_counts(&gold.slots, s);
            let t = self.slot.get_or_insert((0, 0, 0));
            t.0 += c;
            t.1 += p;
            t.2 += g;
        }
        Ok(())
    }

    fn metrics(&self) -> Metrics {
        let acc = |c: Option<usize>| c.map(|c| if self.n == 0 { 0.0 } else { 100.0 * c as f64 / self.n as f64 });
        let slot = self.slot.map(|(c, p, g)| SlotScore::from_counts(c, p, g));
        Metrics {
            examples: self.n,
            domain_accuracy: acc(self.domain),
            intent_accuracy: acc(self.intent),
            slot_precision: slot.map(|s| s.precision),
            slot_recall: slot.map(|s| s.recall),
            slot_f1: slot.map(|s| s.f1),
        }
    }
}

/// Unweighted mean of per-bucket metrics.
pub fn macro_average<'a, I: IntoIterator<Item = &'a Metrics>>(rows: I) -> Metrics {
    let rows: Vec<&Metrics> = rows.into_iter().collect();
    let mean = |f: fn(&Metrics) -> Option<f64>| -> Option<f64> {
        if rows.is_empty() {
            return None;
        }
        let vals: Option<Vec<f64>> = rows.iter().map(|m| f(m)).collect();
        vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    Metrics {
        examples: rows.iter().map(|m| m.examples).sum(),
        domain_accuracy: mean(|m| m.domain_accuracy),
        intent_accuracy: mean(|m| m.intent_accuracy),
        slot_precision: mean(|m| m.slot_precision),
        slot_recall: mean(|m| m.slot_recall),
        slot_f1: mean(|m| m.slot_f1),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    /// Micro totals over the whole corpus.
    pub total: Metrics,
    /// Keyed by gold domain.
    pub per_domain: BTreeMap<String, Metrics>,
    /// Unweighted mean of the per-domain rows.
    pub average: Metrics,
}

/// Per-domain, total and macro-average metrics of aligned predictions.
pub fn per_domain_breakdown(variant: &str, gold: &[Example], predictions: &[Prediction]) -> Result<EvalReport> {
    if gold.len() != predictions.len() {
        return Err(Error::Contract(format!(
            "{} examples but {} predictions",
            gold.len(),
            predictions.len()
        )));
    }
    let mut total = Tally::default();
    let mut by: BTreeMap<String, Tally> = BTreeMap::new();
    for (ex, p) in gold.iter().zip(predictions) {
        total.add(ex, p)?;
        by.entry(ex.domain.clone()).or_default().add(ex, p)?;
    }
    let per_domain: BTreeMap<String, Metrics> = by.into_iter().map(|(k, t)| (k, t.metrics())).collect();
    Ok(EvalReport {
        variant: variant.to_string(),
        total: total.metrics(),
        average: macro_average(per_domain.values()),
        per_domain,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Independent,
    Pipeline,
    OracleDomain,
    Joint,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Independent, Variant::Pipeline, Variant::OracleDomain, Variant::Joint];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Independent => "independent",
            Variant::Pipeline => "pipeline",
            Variant::OracleDomain => "oracle-domain",
            Variant::Joint => "joint",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" => Ok(Variant::Independent),
            "pipeline" => Ok(Variant::Pipeline),
            "oracle-domain" | "oracle" => Ok(Variant::OracleDomain),
            "joint" | "onenet" => Ok(Variant::Joint),
            _ => Err(Error::Config(format!(
                "unknown variant `{s}` (expected independent, pipeline, oracle-domain or joint)"
            ))),
        }
    }
}

/// The trained networks behind the variants. Each variant reads only the
/// fields it needs.
#[derive(Clone, Debug, Default)]
pub struct ModelSet {
    pub joint: Option<OneNet>,
    /// Flat single-task networks.
    pub domain: Option<OneNet>,
    pub intent: Option<OneNet>,
    pub slot: Option<OneNet>,
    /// Per-domain single-task networks keyed by domain.
    pub domain_intent: BTreeMap<String, OneNet>,
    pub domain_slot: BTreeMap<String, OneNet>,
}

impl ModelSet {
    /// Every network with its role name, in a fixed order.
    pub fn roles(&self) -> Vec<(String, &OneNet)> {
        let mut out = Vec::new();
        for (name, m) in [("joint", &self.joint), ("domain", &self.domain), ("intent", &self.intent), ("slot", &self.slot)] {
            if let Some(m) = m {
                out.push((name.to_string(), m));
            }
        }
        for (d, m) in &self.domain_intent {
            out.push((format!("intent.{d}"), m));
        }
        for (d, m) in &self.domain_slot {
            out.push((format!("slot.{d}"), m));
        }
        out
    }

    pub fn insert_role(&mut self, role: &str, model: OneNet) -> Result<()> {
        match role {
            "joint" => self.joint = Some(model),
            "domain" => self.domain = Some(model),
            "intent" => self.intent = Some(model),
            "slot" => self.slot = Some(model),
            _ => {
                if let Some(d) = role.strip_prefix("intent.") {
                    self.domain_intent.insert(d.to_string(), model);
                } else if let Some(d) = role.strip_prefix("slot.") {
                    self.domain_slot.insert(d.to_string(), model);
                } else {
                    return Err(Error::Checkpoint(format!("unknown model role `{role}`")));
                }
            }
        }
        Ok(())
    }

    /// Check that `variant` has every network it needs.
    pub fn check(&self, variant: Variant) -> Result<()> {
        let need = |m: &Option<OneNet>, what: &str| {
            m.as_ref()
                .map(|_| ())
                .ok_or_else(|| Error::Config(format!("{variant} variant needs a {what} model")))
        };
        match variant {
            Variant::Joint => need(&self.joint, "joint"),
            Variant::Independent => {
                need(&self.domain, "domain")?;
                need(&self.intent, "intent")?;
                need(&self.slot, "slot")
            }
            Variant::Pipeline | Variant::OracleDomain => {
                let domains: Vec<String> = if variant == Variant::Pipeline {
                    need(&self.domain, "domain")?;
                    self.domain.as_ref().expect("checked").labels.domains.clone()
                } else {
                    self.domain_intent.keys().cloned().collect()
                };
                if domains.is_empty() {
                    return Err(Error::Config(format!("{variant} variant has no per-domain models")));
                }
                for d in &domains {
                    if !self.domain_intent.contains_key(d) {
                        return Err(Error::Config(format!("missing per-domain intent model for `{d}`")));
                    }
                    if !self.domain_slot.contains_key(d) {
                        return Err(Error::Config(format!("missing per-domain slot model for `{d}`")));
                    }
                }
                Ok(())
            }
        }
    }

    /// Domain inventory the set predicts over.
    pub fn domains(&self) -> Vec<String> {
        if let Some(m) = self.joint.as_ref().or(self.domain.as_ref()) {
            return m.labels.domains.clone();
        }
        self.domain_intent.keys().cloned().collect()
    }
}

fn routed(models: &ModelSet, domain: &str, tokens: &[String]) -> Result<Prediction> {
    let im = models
        .domain_intent
        .get(domain)
        .ok_or_else(|| Error::Config(format!("missing per-domain intent model for `{domain}`")))?;
    let sm = models
        .domain_slot
        .get(domain)
        .ok_or_else(|| Error::Config(format!("missing per-domain slot model for `{domain}`")))?;
    Ok(Prediction {
        domain: Some(domain.to_string()),
        intent: im.predict(tokens)?.intent,
        slots: sm.predict(tokens)?.slots,
    })
}

/// Predict one utterance under `variant`. `gold_domain` is required by
/// the oracle variant and ignored by the others.
pub fn predict_variant(
    variant: Variant,
    models: &ModelSet,
    tokens: &[String],
    gold_domain: Option<&str>,
) -> Result<Prediction> {
    match variant {
        Variant::Joint => models
            .joint
            .as_ref()
            .ok_or_else(|| Error::Config("joint variant needs a joint model".into()))?
            .predict(tokens),
        Variant::Independent => {
            fn get<'m>(m: &'m Option<OneNet>, what: &str) -> Result<&'m OneNet> {
                m.as_ref()
                    .ok_or_else(|| Error::Config(format!("independent variant needs a {what} model")))
            }
            Ok(Prediction {
                domain: get(&models.domain, "domain")?.predict(tokens)?.domain,
                intent: get(&models.intent, "intent")?.predict(tokens)?.intent,
                slots: get(&models.slot, "slot")?.predict(tokens)?.slots,
            })
        }
        Variant::Pipeline => {
            let dm = models
                .domain
                .as_ref()
                .ok_or_else(|| Error::Config("pipeline variant needs a domain model".into()))?;
            let d = dm.predict(tokens)?.domain.expect("domain model predicts a domain");
            routed(models, &d, tokens)
        }
        Variant::OracleDomain => {
            let d = gold_domain.ok_or_else(|| Error::Config("oracle-domain variant needs the gold domain".into()))?;
            routed(models, d, tokens)
        }
    }
}

/// Run `variant` over `test` and report overall and per-domain metrics.
pub fn evaluate_variant(variant: Variant, models: &ModelSet, test: &[Example]) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    models.check(variant)?;
    let preds = test
        .par_iter()
        .map(|ex| predict_variant(variant, models, &ex.tokens, Some(&ex.domain)))
        .collect::<Result<Vec<_>>>()?;
    per_domain_breakdown(variant.as_str(), test, &preds)
}

/// Metrics of one network's own heads over `examples`.
pub fn score_model(model: &OneNet, examples: &[Example]) -> Result<Metrics> {
    let preds = examples
        .par_iter()
        .map(|ex| model.predict(&ex.tokens))
        .collect::<Result<Vec<_>>>()?;
    let mut t = Tally::default();
    for (ex, p) in examples.iter().zip(&preds) {
        t.add(ex, p)?;
    }
    Ok(t.metrics())
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

/// Aligned table with one row per (variant, bucket): each domain, the
/// unweighted AVG and the micro TOTAL.
pub fn format_breakdown(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<14} {:<16} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "variant", "domain", "n", "dom-acc", "int-acc", "slot-P", "slot-R", "slot-F1"
    );
    for r in reports {
        let rows = r
            .per_domain
            .iter()
            .map(|(k, m)| (k.as_str(), m))
            .chain([("AVG", &r.average), ("TOTAL", &r.total)]);
        for (name, m) in rows {
            let _ = writeln!(
                s,
                "{:<14} {:<16} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8}",
                r.variant,
                name,
                m.examples,
                cell(m.domain_accuracy),
                cell(m.intent_accuracy),
                cell(m.slot_precision),
                cell(m.slot_recall),
                cell(m.slot_f1)
            );
        }
    }
    s
}

/// One line per variant with corpus-level accuracy and slot F1.
pub fn format_comparison(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<14} {:>8} {:>8} {:>8}", "variant", "domain", "intent", "slot-F1");
    for r in reports {
        let _ = writeln!(
            s,
            "{:<14} {:>8} {:>8} {:>8}",
            r.variant,
            cell(r.total.domain_accuracy),
            cell(r.total.intent_accuracy),
            cell(r.total.slot_f1)
        );
    }
    s
}
