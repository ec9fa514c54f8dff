//! The `onenet` command-line driver.
//!
//! Data goes to stdout, diagnostics to stderr. The exit code is 0 on
//! success, 1 on any error (including a failed gradient check) and 2 on a
//! usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::checkpoint::{self, sha256_hex, write_atomic};
use crate::config::RunConfig;
use crate::crf::CrfScoreMode;
use crate::data::{
    parse_corpus, repair_bio, schema_sidecar_path, serialize_examples, split_by_domain, write_schema,
    CorpusSchema, Example, SyntheticSpec,
};
use crate::embedding::load_pretrained;
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_variant, extract_chunks, format_breakdown, format_comparison, predict_variant, EvalReport, ModelSet,
    Variant,
};
use crate::gradcheck::{check_mini_onenet, MiniSpec};
use crate::graph::OpKind;
use crate::trainer::{train_roles, EpochRecord, Roles, TrainLog, TrainSetup};

#[derive(Parser, Debug)]
#[command(name = "onenet", version, about = "Joint domain, intent and slot prediction")]
pub struct Cli {
    /// Worker threads for evaluation and prediction.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic train/tune/test corpus.
    Generate(GenerateArgs),
    /// Train the networks of one variant and write checkpoints and a manifest.
    Train(TrainArgs),
    /// Evaluate trained networks on a corpus.
    Eval(EvalArgs),
    /// Predict domain, intent and slots for token arrays, one per line.
    Predict(PredictArgs),
    /// Train and evaluate all four variants on one corpus.
    Compare(TrainArgs),
    /// Check analytic gradients of a miniature network against finite
    /// differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Synthetic spec (JSON). Defaults to the built-in five-domain spec.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Override the spec seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Flags mirroring the config keys. Flags override the config file.
#[derive(Args, Debug, Default)]
pub struct Overrides {
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub train: Option<String>,
    #[arg(long)]
    pub tune: Option<String>,
    #[arg(long)]
    pub test: Option<String>,
    #[arg(long)]
    pub embeddings: Option<String>,
    #[arg(long)]
    pub out_dir: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<String>,
    #[arg(long)]
    pub beta1: Option<String>,
    #[arg(long)]
    pub beta2: Option<String>,
    #[arg(long)]
    pub epsilon: Option<String>,
    #[arg(long)]
    pub dropout_keep: Option<String>,
    #[arg(long)]
    pub stage_epochs: Option<String>,
    #[arg(long)]
    pub single_task_epochs: Option<String>,
    #[arg(long)]
    pub patience: Option<String>,
    #[arg(long)]
    pub unk_prob: Option<String>,
    #[arg(long)]
    pub clip_norm: Option<String>,
    #[arg(long)]
    pub char_dim: Option<String>,
    #[arg(long)]
    pub char_hidden: Option<String>,
    #[arg(long)]
    pub word_dim: Option<String>,
    #[arg(long)]
    pub word_hidden: Option<String>,
    #[arg(long)]
    pub use_chars: Option<String>,
    #[arg(long)]
    pub crf_score: Option<String>,
    #[arg(long)]
    pub lowercase_fallback: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        let all: [(&'static str, &Option<String>); 24] = [
            ("variant", &self.variant),
            ("seed", &self.seed),
            ("train", &self.train),
            ("tune", &self.tune),
            ("test", &self.test),
            ("embeddings", &self.embeddings),
            ("out_dir", &self.out_dir),
            ("learning_rate", &self.learning_rate),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
            ("epsilon", &self.epsilon),
            ("dropout_keep", &self.dropout_keep),
            ("stage_epochs", &self.stage_epochs),
            ("single_task_epochs", &self.single_task_epochs),
            ("patience", &self.patience),
            ("unk_prob", &self.unk_prob),
            ("clip_norm", &self.clip_norm),
            ("char_dim", &self.char_dim),
            ("char_hidden", &self.char_hidden),
            ("word_dim", &self.word_dim),
            ("word_hidden", &self.word_hidden),
            ("use_chars", &self.use_chars),
            ("crf_score", &self.crf_score),
            ("lowercase_fallback", &self.lowercase_fallback),
        ];
        all.into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect()
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Defaults to the variant recorded with the models.
    #[arg(long)]
    pub variant: Option<String>,
    /// Where to write the JSON report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub variant: Option<String>,
    /// Input file; standard input when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub char_dim: usize,
    #[arg(long, default_value_t = 10)]
    pub word_dim: usize,
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
    #[arg(long, default_value_t = 3)]
    pub domains: usize,
    #[arg(long, default_value_t = 4)]
    pub intents: usize,
    #[arg(long, default_value_t = 3)]
    pub entity_types: usize,
    #[arg(long, default_value_t = 3)]
    pub tokens: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value = "additive")]
    pub crf_score: String,
    /// Write the JSON report here as well.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// `op:factor`, scales one backward rule (negative control).
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

/// Parse arguments and run. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
    }
    let threads = cli.threads;
    match cli.command {
        Command::Generate(a) => cmd_generate(&a).map(|_| 0),
        Command::Train(a) => with_pool(threads, || cmd_train(&a, threads).map(|_| 0)),
        Command::Compare(a) => with_pool(threads, || cmd_compare(&a, threads).map(|_| 0)),
        Command::Eval(a) => with_pool(threads, || cmd_eval(&a).map(|_| 0)),
        Command::Predict(a) => with_pool(threads, || cmd_predict(&a)),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    }
}

fn with_pool<F: FnOnce() -> Result<i32> + Send>(threads: Option<usize>, f: F) -> Result<i32> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(f)
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => SyntheticSpec::from_json(&fs::read_to_string(p)?)?,
        None => SyntheticSpec::desk_default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let corpus = crate::data::generate_synthetic(&spec)?;
    fs::create_dir_all(&a.out)?;
    let mut out = io::stdout().lock();
    writeln!(out, "{:<8} {:<16} {:>6}", "split", "domain", "count")?;
    for (name, split) in [("train", &corpus.train), ("tune", &corpus.tune), ("test", &corpus.test)] {
        let path = a.out.join(format!("{name}.jsonl"));
        let text = serialize_examples(split);
        write_atomic(&path, text.as_bytes())?;
        write_schema(&schema_sidecar_path(&path), &corpus.schema)?;
        for (d, exs) in split_by_domain(split) {
            writeln!(out, "{:<8} {:<16} {:>6}", name, d, exs.len())?;
        }
        writeln!(out, "{:<8} {:<16} {:>6}  sha256 {}", name, "TOTAL", split.len(), sha256_hex(text.as_bytes()))?;
    }
    write_atomic(&a.out.join("spec.json"), spec.to_json().as_bytes())?;
    Ok(())
}

fn resolve_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    for (k, v) in a.overrides.pairs() {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Loaded {
    train: Vec<Example>,
    tune: Vec<Example>,
    test: Option<Vec<Example>>,
    schema: CorpusSchema,
    checksums: BTreeMap<String, String>,
}

fn load_corpora(cfg: &RunConfig, need_test: bool) -> Result<Loaded> {
    let train_path = cfg
        .train
        .as_ref()
        .ok_or_else(|| Error::Config("no training corpus (set `train`)".into()))?;
    let mut checksums = BTreeMap::new();
    let mut sum = |p: &Path| -> Result<()> {
        checksums.insert(p.display().to_string(), sha256_hex(&fs::read(p)?));
        Ok(())
    };
    sum(train_path)?;
    let (train, mut schema) = parse_corpus(train_path)?;
    let tune = match &cfg.tune {
        Some(p) => {
            sum(p)?;
            parse_corpus(p)?.0
        }
        None => Vec::new(),
    };
    let test = match &cfg.test {
        Some(p) => {
            sum(p)?;
            Some(parse_corpus(p)?.0)
        }
        None if need_test => return Err(Error::Config("no test corpus (set `test`)".into())),
        None => None,
    };
    // Labels seen only in tune/test are unknown to the networks; widen the
    // inferred schema so they are counted as errors rather than rejected.
    if !schema_sidecar_path(train_path).exists() {
        let all: Vec<Example> = train
            .iter()
            .chain(&tune)
            .chain(test.iter().flatten())
            .cloned()
            .collect();
        schema = CorpusSchema::infer(&all);
    }
    for (name, split) in [("tune", &tune), ("test", test.as_ref().unwrap_or(&Vec::new()))] {
        for ex in split.iter() {
            let unknown = schema.unknown_labels(ex);
            if !unknown.is_empty() {
                return Err(Error::Data(format!(
                    "{name} example `{}` uses labels missing from the schema: {}",
                    ex.text(),
                    unknown.join(", ")
                )));
            }
        }
    }
    Ok(Loaded {
        train,
        tune,
        test,
        schema,
        checksums,
    })
}

fn progress(quiet: bool) -> impl FnMut(&str, &EpochRecord) {
    move |role: &str, r: &EpochRecord| {
        if quiet {
            return;
        }
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
        eprintln!(
            "[{role}] {} epoch {}: loss {:.4}  tune domain {} intent {} slot-F1 {}",
            r.stage,
            r.epoch,
            r.mean_loss,
            f(r.tune.domain_accuracy),
            f(r.tune.intent_accuracy),
            f(r.tune.slot_f1)
        );
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config: String,
    seed: u64,
    corpus_sha256: &'a BTreeMap<String, String>,
    artifacts: BTreeMap<String, String>,
    training: &'a BTreeMap<String, TrainLog>,
    reports: &'a [EvalReport],
}

fn write_manifest(dir: &Path, manifest: &RunManifest<'_>) -> Result<()> {
    let mut json = serde_json::to_string_pretty(manifest)?;
    json.push('\n');
    write_atomic(&dir.join("manifest.json"), json.as_bytes())
}

fn write_report(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut json = if reports.len() == 1 {
        serde_json::to_string_pretty(&reports[0])?
    } else {
        serde_json::to_string_pretty(reports)?
    };
    json.push('\n');
    write_atomic(path, json.as_bytes())
}

fn setup_pretrained(cfg: &RunConfig) -> Result<Option<Vec<(String, Vec<f64>)>>> {
    cfg.embeddings
        .as_ref()
        .map(|p| load_pretrained(p, cfg.model.dims.word_dim))
        .transpose()
}

/// Train, save and (when a test corpus is configured) evaluate.
pub fn cmd_train(a: &TrainArgs, _threads: Option<usize>) -> Result<()> {
    let cfg = resolve_config(a)?;
    let data = load_corpora(&cfg, false)?;
    let vectors = setup_pretrained(&cfg)?;
    let setup = TrainSetup {
        config: &cfg.model,
        hyper: &cfg.hyper,
        pretrained: vectors.as_deref(),
    };
    let (models, logs) = train_roles(
        Roles::for_variant(cfg.variant),
        &setup,
        &data.schema,
        &data.train,
        &data.tune,
        &mut progress(a.quiet),
    )?;
    let model_dir = cfg.out_dir.join("models");
    let index = checkpoint::save_set(&models, &model_dir)?;
    write_atomic(&model_dir.join("variant"), format!("{}\n", cfg.variant).as_bytes())?;
    let mut reports = Vec::new();
    if let Some(test) = &data.test {
        let r = evaluate_variant(cfg.variant, &models, test)?;
        print!("{}", format_breakdown(std::slice::from_ref(&r)));
        write_report(&cfg.out_dir.join("report.json"), std::slice::from_ref(&r))?;
        reports.push(r);
    }
    let artifacts = index
        .models
        .iter()
        .map(|e| (format!("models/{}", e.file), e.sha256.clone()))
        .collect();
    write_manifest(
        &cfg.out_dir,
        &RunManifest {
            command: "train",
            config: cfg.to_text(),
            seed: cfg.hyper.seed,
            corpus_sha256: &data.checksums,
            artifacts,
            training: &logs,
            reports: &reports,
        },
    )?;
    eprintln!("wrote {}", cfg.out_dir.display());
    Ok(())
}

/// Train every variant's networks once and evaluate all four variants.
pub fn cmd_compare(a: &TrainArgs, _threads: Option<usize>) -> Result<()> {
    let cfg = resolve_config(a)?;
    let data = load_corpora(&cfg, true)?;
    let vectors = setup_pretrained(&cfg)?;
    let setup = TrainSetup {
        config: &cfg.model,
        hyper: &cfg.hyper,
        pretrained: vectors.as_deref(),
    };
    let (models, logs) = train_roles(
        Roles::all(),
        &setup,
        &data.schema,
        &data.train,
        &data.tune,
        &mut progress(a.quiet),
    )?;
    let test = data.test.as_ref().expect("required above");
    let reports = Variant::ALL
        .iter()
        .map(|&v| evaluate_variant(v, &models, test))
        .collect::<Result<Vec<_>>>()?;
    print!("{}\n{}", format_comparison(&reports), format_breakdown(&reports));
    let index = checkpoint::save_set(&models, &cfg.out_dir.join("models"))?;
    write_report(&cfg.out_dir.join("compare.json"), &reports)?;
    let artifacts = index
        .models
        .iter()
        .map(|e| (format!("models/{}", e.file), e.sha256.clone()))
        .collect();
    write_manifest(
        &cfg.out_dir,
        &RunManifest {
            command: "compare",
            config: cfg.to_text(),
            seed: cfg.hyper.seed,
            corpus_sha256: &data.checksums,
            artifacts,
            training: &logs,
            reports: &reports,
        },
    )
}

fn pick_variant(explicit: Option<&str>, dir: &Path, models: &ModelSet) -> Result<Variant> {
    if let Some(v) = explicit {
        return v.parse();
    }
    if let Ok(s) = fs::read_to_string(dir.join("variant")) {
        return s.trim().parse();
    }
    if models.joint.is_some() {
        Ok(Variant::Joint)
    } else if models.domain.is_some() && models.intent.is_some() && models.slot.is_some() {
        Ok(Variant::Independent)
    } else if models.domain.is_some() {
        Ok(Variant::Pipeline)
    } else {
        Ok(Variant::OracleDomain)
    }
}

/// Labels of `ex` that none of the networks in `models` can predict.
fn unknown_to_models(models: &ModelSet, ex: &Example) -> Vec<String> {
    let nets = models.roles();
    let mut out = Vec::new();
    if !nets.iter().any(|(_, m)| m.labels.domains.contains(&ex.domain)) {
        out.push(format!("domain `{}`", ex.domain));
    }
    if !nets.iter().any(|(_, m)| m.labels.intents.contains(&ex.intent)) {
        out.push(format!("intent `{}`", ex.intent));
    }
    for e in ex.entity_types() {
        if !nets.iter().any(|(_, m)| m.labels.entity_types.iter().any(|t| t == e)) {
            out.push(format!("entity type `{e}`"));
        }
    }
    out
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let models = checkpoint::load_set(&a.models)?;
    let variant = pick_variant(a.variant.as_deref(), &a.models, &models)?;
    let (examples, _) = parse_corpus(&a.corpus)?;
    let mut unknown: Vec<String> = examples.iter().flat_map(|ex| unknown_to_models(&models, ex)).collect();
    unknown.sort();
    unknown.dedup();
    if !unknown.is_empty() {
        return Err(Error::Data(format!(
            "{} uses labels unknown to the models: {}",
            a.corpus.display(),
            unknown.join(", ")
        )));
    }
    let report = evaluate_variant(variant, &models, &examples)?;
    print!("{}", format_breakdown(std::slice::from_ref(&report)));
    if let Some(p) = &a.report {
        write_report(p, std::slice::from_ref(&report))?;
    }
    Ok(())
}

fn parse_predict_line(line: &str) -> std::result::Result<(Vec<String>, Option<String>), String> {
    let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let (tokens, domain) = match v {
        Value::Array(_) => (v, None),
        Value::Object(mut m) => {
            let t = m.remove("tokens").ok_or("object input needs a `tokens` field")?;
            let d = match m.remove("domain") {
                Some(Value::String(s)) => Some(s),
                Some(_) => return Err("`domain` must be a string".into()),
                None => None,
            };
            (t, d)
        }
        _ => return Err("expected a JSON array of tokens".into()),
    };
    let tokens: Vec<String> = serde_json::from_value(tokens).map_err(|e| format!("tokens: {e}"))?;
    if tokens.is_empty() {
        return Err("empty token array".into());
    }
    if tokens.iter().any(String::is_empty) {
        return Err("empty token".into());
    }
    Ok((tokens, domain))
}

fn predict_record(variant: Variant, models: &ModelSet, lineno: usize, line: &str) -> Value {
    let (tokens, domain) = match parse_predict_line(line) {
        Ok(x) => x,
        Err(e) => return json!({ "line": lineno, "error": e }),
    };
    match predict_variant(variant, models, &tokens, domain.as_deref()) {
        Ok(p) => {
            let slots = p.slots.as_ref().map(|s| repair_bio(s));
            let spans: Vec<Value> = slots
                .as_ref()
                .map(|s| {
                    extract_chunks(s)
                        .into_iter()
                        .map(|(t, b, e)| json!({ "type": t, "start": b, "end": e, "text": tokens[b..e].join(" ") }))
                        .collect()
                })
                .unwrap_or_default();
            json!({
                "line": lineno,
                "tokens": tokens,
                "domain": p.domain,
                "intent": p.intent,
                "slots": slots,
                "spans": spans,
            })
        }
        Err(e) => json!({ "line": lineno, "error": e.to_string() }),
    }
}

fn cmd_predict(a: &PredictArgs) -> Result<i32> {
    use rayon::prelude::*;
    let models = checkpoint::load_set(&a.models)?;
    let variant = pick_variant(a.variant.as_deref(), &a.models, &models)?;
    models.check(variant)?;
    let reader: Box<dyn BufRead> = match &a.input {
        Some(p) => Box::new(io::BufReader::new(fs::File::open(p)?)),
        None => Box::new(io::stdin().lock()),
    };
    let lines: Vec<(usize, String)> = reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)))
        .collect::<io::Result<_>>()?;
    let records: Vec<Value> = lines
        .par_iter()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| predict_record(variant, &models, *n, l))
        .collect();
    let mut out = io::stdout().lock();
    let mut failures = 0;
    for r in &records {
        if r.get("error").is_some() {
            failures += 1;
        }
        writeln!(out, "{r}")?;
    }
    if failures > 0 {
        eprintln!("{failures} line(s) could not be processed");
        return Ok(1);
    }
    Ok(0)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<i32> {
    let fault = match &a.inject_fault {
        Some(s) => {
            let (op, factor) = s
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("--inject-fault expects op:factor, got `{s}`")))?;
            let kind = OpKind::parse(op).ok_or_else(|| Error::Config(format!("unknown op `{op}`")))?;
            let factor: f64 = factor
                .parse()
                .map_err(|e| Error::Config(format!("bad fault factor `{factor}`: {e}")))?;
            Some((kind, factor))
        }
        None => None,
    };
    let mode: CrfScoreMode = a.crf_score.parse()?;
    let spec = MiniSpec {
        char_dim: a.char_dim,
        word_dim: a.word_dim,
        hidden: a.hidden,
        domains: a.domains,
        intents: a.intents,
        entity_types: a.entity_types,
        tokens: a.tokens,
    };
    let report = check_mini_onenet(spec, mode, a.seed, a.step, a.tolerance, fault)?;
    let mut out = io::stdout().lock();
    writeln!(
        out,
        "{:<28} {:>7} {:>11} {:>11} {:>11}  status",
        "tensor", "coords", "scale", "max-abs-err", "max-rel-err"
    )?;
    for t in &report.tensors {
        let ok = t.max_relative_error < report.tolerance;
        writeln!(
            out,
            "{:<28} {:>7} {:>11.3e} {:>11.3e} {:>11.3e}  {}",
            t.name,
            t.coordinates,
            t.scale,
            t.max_absolute_error,
            t.max_relative_error,
            if ok { "ok" } else { "FAIL" }
        )?;
    }
    writeln!(
        out,
        "loss {:.6}  max relative error {:.3e}  tolerance {:e}",
        report.loss,
        report.max_relative_error(),
        report.tolerance
    )?;
    if let Some(p) = &a.report {
        let mut json = serde_json::to_string_pretty(&report)?;
        json.push('\n');
        write_atomic(p, json.as_bytes())?;
    }
    if report.passed() {
        Ok(0)
    } else {
        let names: Vec<&str> = report.failures().iter().map(|t| t.name.as_str()).collect();
        eprintln!("gradient check failed for: {}", names.join(", "));
        Ok(1)
    }
}
