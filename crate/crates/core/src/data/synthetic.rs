//! Seeded template-based generator for multi-domain SLU corpora.
//!
//! Templates are whitespace-tokenized strings. A token of the form `{type}`
//! is filled from the lexicon `type` and labeled as a `type` slot;
//! `{type:lexicon}` labels the span as `type` but draws the value from
//! `lexicon`. Lexicon values may themselves contain placeholders, which are
//! expanded in place and absorbed into the enclosing slot. That is how
//! ambiguity is injected: a `message` slot can contain times, dates and
//! event titles that elsewhere signal the calendar or alarm domains.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusSchema, Example};
use crate::error::{Error, Result};

const MAX_NESTING: usize = 4;
const MAX_ATTEMPTS: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub tune: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentSpec {
    pub name: String,
    pub templates: Vec<String>,
    /// Drawn instead of `templates` with probability `ambiguity_rate`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ambiguous_templates: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub name: String,
    pub intents: Vec<IntentSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lexicon {
    pub values: Vec<String>,
    /// Values that never appear in the training split.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub heldout: Vec<String>,
    /// Probability that a tune/test draw comes from `heldout`.
    #[serde(default)]
    pub heldout_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    /// Examples per domain in each split.
    pub counts: SplitCounts,
    #[serde(default)]
    pub ambiguity_rate: f64,
    pub domains: Vec<DomainSpec>,
    pub lexicons: BTreeMap<String, Lexicon>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<Example>,
    pub tune: Vec<Example>,
    pub test: Vec<Example>,
    pub schema: CorpusSchema,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Split {
    Train,
    Tune,
    Test,
}

/// A parsed `{type}` or `{type:lexicon}` token.
fn placeholder(token: &str) -> Option<(&str, &str)> {
    let inner = token.strip_prefix('{')?.strip_suffix('}')?;
    match inner.split_once(':') {
        Some((label, lex)) => Some((label, lex)),
        None => Some((inner, inner)),
    }
}

impl SyntheticSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        let spec: SyntheticSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(Error::Spec("no domains".into()));
        }
        if !(0.0..=1.0).contains(&self.ambiguity_rate) {
            return Err(Error::Spec(format!("ambiguity_rate {} not in [0, 1]", self.ambiguity_rate)));
        }
        for (name, lex) in &self.lexicons {
            if lex.values.is_empty() {
                return Err(Error::Spec(format!("lexicon `{name}` has no values")));
            }
            if !(0.0..=1.0).contains(&lex.heldout_rate) {
                return Err(Error::Spec(format!("lexicon `{name}` heldout_rate not in [0, 1]")));
            }
            for v in lex.values.iter().chain(&lex.heldout) {
                if v.split_whitespace().next().is_none() {
                    return Err(Error::Spec(format!("lexicon `{name}` has an empty value")));
                }
                self.check_text(v, 1)?;
            }
        }
        for d in &self.domains {
            if d.intents.is_empty() {
                return Err(Error::Spec(format!("domain `{}` has no intents", d.name)));
            }
            for i in &d.intents {
                if i.templates.is_empty() {
                    return Err(Error::Spec(format!(
                        "intent `{}` of domain `{}` has no templates",
                        i.name, d.name
                    )));
                }
                for t in i.templates.iter().chain(&i.ambiguous_templates) {
                    if t.split_whitespace().next().is_none() {
                        return Err(Error::Spec(format!("empty template in intent `{}`", i.name)));
                    }
                    self.check_text(t, 0)?;
                }
            }
        }
        Ok(())
    }

    fn check_text(&self, text: &str, depth: usize) -> Result<()> {
        if depth > MAX_NESTING {
            return Err(Error::Spec(format!("placeholders nested deeper than {MAX_NESTING} in `{text}`")));
        }
        for tok in text.split_whitespace() {
            if let Some((label, lex)) = placeholder(tok) {
                if label.is_empty() || label.contains('-') {
                    return Err(Error::Spec(format!("bad slot type in placeholder `{tok}`")));
                }
                let Some(l) = self.lexicons.get(lex) else {
                    return Err(Error::Spec(format!("unresolvable placeholder `{tok}`: no lexicon `{lex}`")));
                };
                for v in l.values.iter().chain(&l.heldout) {
                    self.check_text(v, depth + 1)?;
                }
            }
        }
        Ok(())
    }

    /// Five domains shaped like a personal-assistant corpus, 1000/100/500
    /// examples per domain, with cross-domain ambiguity and held-out,
    /// morphologically regular names in the test split.
    pub fn desk_default() -> Self {
        desk_default_spec()
    }
}

fn expand_value<R: Rng>(
    spec: &SyntheticSpec,
    lexicon: &str,
    split: Split,
    rng: &mut R,
    out: &mut Vec<String>,
    depth: usize,
) -> Result<()> {
    let lex = spec
        .lexicons
        .get(lexicon)
        .ok_or_else(|| Error::Spec(format!("unresolvable placeholder: no lexicon `{lexicon}`")))?;
    if depth > MAX_NESTING {
        return Err(Error::Spec(format!("lexicon `{lexicon}` nests too deeply")));
    }
    let use_heldout =
        split != Split::Train && !lex.heldout.is_empty() && rng.gen::<f64>() < lex.heldout_rate;
    let pool = if use_heldout { &lex.heldout } else { &lex.values };
    let value = pool.choose(rng).expect("validated non-empty");
    for tok in value.split_whitespace() {
        match placeholder(tok) {
            Some((_, inner)) => expand_value(spec, inner, split, rng, out, depth + 1)?,
            None => out.push(tok.to_string()),
        }
    }
    Ok(())
}

fn instantiate<R: Rng>(
    spec: &SyntheticSpec,
    template: &str,
    split: Split,
    rng: &mut R,
) -> Result<(Vec<String>, Vec<String>)> {
    let mut tokens = Vec::new();
    let mut slots = Vec::new();
    for tok in template.split_whitespace() {
        match placeholder(tok) {
            Some((label, lex)) => {
                let start = tokens.len();
                expand_value(spec, lex, split, rng, &mut tokens, 1)?;
                for i in start..tokens.len() {
                    slots.push(if i == start {
                        format!("B-{label}")
                    } else {
                        format!("I-{label}")
                    });
                }
            }
            None => {
                tokens.push(tok.to_string());
                slots.push("O".to_string());
            }
        }
    }
    Ok((tokens, slots))
}

/// Generate train/tune/test splits. Output is a pure function of `spec`.
///
/// No tune or test utterance appears verbatim in train, and no test
/// utterance appears in tune.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seen_train: HashSet<Vec<String>> = HashSet::new();
    let mut seen_tune: HashSet<Vec<String>> = HashSet::new();
    let mut splits = Vec::with_capacity(3);
    for (split, count) in [
        (Split::Train, spec.counts.train),
        (Split::Tune, spec.counts.tune),
        (Split::Test, spec.counts.test),
    ] {
        let mut examples = Vec::with_capacity(count * spec.domains.len());
        for domain in &spec.domains {
            for _ in 0..count {
                let mut accepted = None;
                for _ in 0..MAX_ATTEMPTS {
                    let intent = domain.intents.choose(&mut rng).expect("validated");
                    let ambiguous = !intent.ambiguous_templates.is_empty()
                        && rng.gen::<f64>() < spec.ambiguity_rate;
                    let pool = if ambiguous {
                        &intent.ambiguous_templates
                    } else {
                        &intent.templates
                    };
                    let template = pool.choose(&mut rng).expect("validated");
                    let (tokens, slots) = instantiate(spec, template, split, &mut rng)?;
                    let clash = match split {
                        Split::Train => false,
                        Split::Tune => seen_train.contains(&tokens),
                        Split::Test => seen_train.contains(&tokens) || seen_tune.contains(&tokens),
                    };
                    if !clash {
                        accepted = Some(Example::new(tokens, &domain.name, &intent.name, slots)?);
                        break;
                    }
                }
                let ex = accepted.ok_or_else(|| {
                    Error::Spec(format!(
                        "could not generate a {split:?} utterance for domain `{}` distinct from earlier splits",
                        domain.name
                    ))
                })?;
                match split {
                    Split::Train => {
                        seen_train.insert(ex.tokens.clone());
                    }
                    Split::Tune => {
                        seen_tune.insert(ex.tokens.clone());
                    }
                    Split::Test => {}
                }
                examples.push(ex);
            }
        }
        examples.shuffle(&mut rng);
        splits.push(examples);
    }
    let test = splits.pop().unwrap_or_default();
    let tune = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    let all: Vec<Example> = train.iter().chain(&tune).chain(&test).cloned().collect();
    let schema = CorpusSchema::infer(&all);
    Ok(SyntheticCorpus {
        train,
        tune,
        test,
        schema,
    })
}

fn words(s: &str) -> Vec<String> {
    s.split('|').map(|w| w.trim().to_string()).collect()
}

/// Names built from stems and a suffix family, split into train and held-out
/// sets by stem so held-out names share only their suffixes with training
/// names.
fn names(stems: &[&str], suffixes: &[&str], heldout_every: usize) -> (Vec<String>, Vec<String>) {
    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for (i, stem) in stems.iter().enumerate() {
        for suffix in suffixes {
            let name = format!("{stem}{suffix}");
            if i % heldout_every == heldout_every - 1 {
                heldout.push(name);
            } else {
                train.push(name);
            }
        }
    }
    (train, heldout)
}

fn lex(values: Vec<String>) -> Lexicon {
    Lexicon {
        values,
        heldout: Vec::new(),
        heldout_rate: 0.0,
    }
}

fn intent(name: &str, templates: &[&str], ambiguous: &[&str]) -> IntentSpec {
    IntentSpec {
        name: name.to_string(),
        templates: templates.iter().map(|s| s.to_string()).collect(),
        ambiguous_templates: ambiguous.iter().map(|s| s.to_string()).collect(),
    }
}

fn desk_default_spec() -> SyntheticSpec {
    let hours = [
        "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
        "twelve",
    ];
    let mut times = Vec::new();
    for h in hours {
        for m in ["", " fifteen", " thirty", " forty five"] {
            for ap in ["", " am", " pm"] {
                times.push(format!("{h}{m}{ap}"));
            }
        }
    }
    for h in 1..=12 {
        for m in ["00", "15", "30", "45"] {
            times.push(format!("{h}:{m}"));
        }
    }
    times.extend(words("noon|midnight|half past six|quarter to nine|quarter past ten"));

    let days = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"];
    let mut dates = words("today|tomorrow|tonight|this weekend|next week|the day after tomorrow");
    for d in days {
        dates.push(d.to_string());
        dates.push(format!("next {d}"));
        dates.push(format!("this {d}"));
        dates.push(format!("on {d}"));
    }
    for n in 1..=28 {
        let suffix = match n {
            1 | 21 => "st",
            2 | 22 => "nd",
            3 | 23 => "rd",
            _ => "th",
        };
        dates.push(format!("on the {n}{suffix}"));
    }

    let person_stems = [
        "may", "jos", "mil", "dan", "lun", "ros", "kat", "ber", "fel", "har", "ivy", "jul", "len",
        "mar", "nor", "ott", "pen", "quin", "rob", "sel", "tam", "val", "wen", "zar",
    ];
    let (contacts, contacts_heldout) = names(&person_stems, &["a", "ie", "ina", "ette"], 4);
    let place_stems = [
        "ash", "bel", "cor", "dun", "elm", "fair", "glen", "hal", "kings", "lin", "mid", "north",
        "oak", "pres", "red", "stan", "thorn", "wood", "brook", "carl",
    ];
    let (places, places_heldout) = names(&place_stems, &["ford", "ville", "burg", "field", "ton"], 4);

    let mut lexicons = BTreeMap::new();
    lexicons.insert("time".into(), lex(times));
    lexicons.insert("date".into(), lex(dates));
    lexicons.insert(
        "duration".into(),
        lex(words("five minutes|ten minutes|fifteen minutes|twenty minutes|half an hour|an hour|two minutes|nine minutes")),
    );
    lexicons.insert(
        "title".into(),
        lex(words(
            "lunch|team meeting|dentist appointment|standup|yoga class|project review|dinner|budget sync|piano lesson|doctor visit|book club|interview|haircut|one on one|planning session|coffee chat",
        )),
    );
    lexicons.insert(
        "contact_name".into(),
        Lexicon {
            values: contacts,
            heldout: contacts_heldout,
            heldout_rate: 0.5,
        },
    );
    lexicons.insert(
        "place_name".into(),
        Lexicon {
            values: places,
            heldout: places_heldout,
            heldout_rate: 0.5,
        },
    );
    lexicons.insert(
        "place_type".into(),
        lex(words(
            "coffee shop|pharmacy|gas station|restaurant|bakery|grocery store|library|gym|post office|bank|hospital|pizza place",
        )),
    );
    lexicons.insert(
        "message".into(),
        lex(words(
            "i am running late|see you soon|call me back|thanks for everything|happy birthday|on my way|sounds good|can you pick up milk|the kids are asleep|dont forget the keys|good luck today|miss you",
        )),
    );
    // Messages that read like calendar, alarm or reminder requests.
    lexicons.insert(
        "confusable_message".into(),
        lex(words(
            "change of {title} {date} from {time} to {time}|{title} moved to {time}|{title} is {date} at {time}|wake me up at {time}|set the {title} for {date}|i will be there at {time}|remind me about {title}|the {place_type} closes at {time}|cancel {title} {date}",
        )),
    );
    lexicons.insert(
        "reminder_text".into(),
        lex(words(
            "buy milk|pay rent|water the plants|take my pills|feed the cat|pick up the laundry|submit the report|renew my passport|book flights|charge my phone|clean the garage|return library books",
        )),
    );
    lexicons.insert(
        "confusable_reminder".into(),
        lex(words(
            "call {contact_name}|text {contact_name}|go to {place_name}|move {title}|set an alarm|check the {place_type} hours|email {contact_name}|prepare for {title}",
        )),
    );

    let domains = vec![
        DomainSpec {
            name: "alarm".into(),
            intents: vec![
                intent(
                    "set_alarm",
                    &[
                        "set an alarm for {time}",
                        "wake me up at {time} {date}",
                        "set alarm {date} at {time}",
                        "alarm for {time} please",
                        "i need an alarm at {time}",
                        "wake me {date} at {time}",
                    ],
                    &[],
                ),
                intent(
                    "delete_alarm",
                    &[
                        "delete my {time} alarm",
                        "cancel the alarm for {date}",
                        "remove alarm at {time}",
                        "turn off the {time} alarm",
                        "cancel my alarm {date} at {time}",
                    ],
                    &[],
                ),
                intent(
                    "snooze_alarm",
                    &[
                        "snooze for {duration}",
                        "snooze the alarm {duration}",
                        "give me {duration} more",
                        "snooze {duration} please",
                        "let me sleep {duration} longer",
                    ],
                    &[],
                ),
            ],
        },
        DomainSpec {
            name: "calendar".into(),
            intents: vec![
                intent(
                    "add_event",
                    &[
                        "add {title} to my calendar {date} at {time}",
                        "schedule {title} with {contact_name} {date}",
                        "create an event {title} at {time}",
                        "put {title} on my calendar {date}",
                        "book {title} {date} at {time}",
                    ],
                    &["schedule {title} with {contact_name} at {place_name} {date}"],
                ),
                intent(
                    "find_event",
                    &[
                        "what is on my calendar {date}",
                        "when is my {title}",
                        "do i have anything at {time} {date}",
                        "show my meetings with {contact_name}",
                        "am i free {date} at {time}",
                    ],
                    &[],
                ),
                intent(
                    "change_event",
                    &[
                        "move {title} to {time}",
                        "change {title} {date} from {time} to {time}",
                        "reschedule {title} with {contact_name} to {date}",
                        "push {title} to {date} at {time}",
                    ],
                    &["tell {contact_name} i moved {title} to {time}"],
                ),
            ],
        },
        DomainSpec {
            name: "communication".into(),
            intents: vec![
                intent(
                    "send_text",
                    &[
                        "text {contact_name} {message}",
                        "send a message to {contact_name} saying {message}",
                        "tell {contact_name} {message}",
                        "message {contact_name} {message}",
                    ],
                    &[
                        "inform {contact_name} about {message:confusable_message}",
                        "text {contact_name} {message:confusable_message}",
                        "tell {contact_name} {message:confusable_message}",
                    ],
                ),
                intent(
                    "make_call",
                    &[
                        "call {contact_name}",
                        "call {contact_name} {date} at {time}",
                        "phone {contact_name} now",
                        "dial {contact_name}",
                        "ring {contact_name} on mobile",
                    ],
                    &[],
                ),
                intent(
                    "read_messages",
                    &[
                        "read my messages from {contact_name}",
                        "any new texts from {contact_name}",
                        "show messages from {contact_name} {date}",
                        "did {contact_name} text me {date}",
                    ],
                    &[],
                ),
            ],
        },
        DomainSpec {
            name: "places".into(),
            intents: vec![
                intent(
                    "find_place",
                    &[
                        "find a {place_type} near me",
                        "where is {place_name}",
                        "show {place_type} near {place_name}",
                        "find the nearest {place_type} to {place_name}",
                    ],
                    &[],
                ),
                intent(
                    "get_directions",
                    &[
                        "directions to {place_name}",
                        "how do i get to {place_name}",
                        "navigate to the {place_type} in {place_name}",
                        "take me to {place_name} {date}",
                    ],
                    &[],
                ),
                intent(
                    "call_place",
                    &[
                        "call {place_name}",
                        "phone the {place_type} in {place_name}",
                        "ring {place_name}",
                        "dial {place_name} {place_type}",
                    ],
                    &[],
                ),
                intent(
                    "check_hours",
                    &[
                        "is {place_name} open {date}",
                        "when does the {place_type} close {date}",
                        "hours for the {place_type} in {place_name}",
                        "is the {place_type} open at {time}",
                    ],
                    &[],
                ),
            ],
        },
        DomainSpec {
            name: "reminder".into(),
            intents: vec![
                intent(
                    "add_reminder",
                    &[
                        "remind me to {reminder_text} at {time}",
                        "remind me {date} to {reminder_text}",
                        "set a reminder to {reminder_text} {date} at {time}",
                        "dont let me forget to {reminder_text} {date}",
                    ],
                    &[
                        "remind me to {reminder_text:confusable_reminder} at {time}",
                        "remind me {date} to {reminder_text:confusable_reminder}",
                    ],
                ),
                intent(
                    "find_reminder",
                    &[
                        "what are my reminders {date}",
                        "show reminders about {reminder_text}",
                        "do i have a reminder to {reminder_text}",
                        "list my reminders for {date}",
                    ],
                    &[],
                ),
            ],
        },
    ];

    SyntheticSpec {
        seed: 20170101,
        counts: SplitCounts {
            train: 1000,
            tune: 100,
            test: 500,
        },
        ambiguity_rate: 0.3,
        domains,
        lexicons,
    }
}
