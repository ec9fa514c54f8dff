//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may be written
//! with `_` or `-`. Relative paths are resolved against the directory of the
//! config file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::crf::CrfScoreMode;
use crate::error::{Error, Result};
use crate::eval::Variant;
use crate::model::ModelConfig;
use crate::trainer::Hyperparams;

pub const SEED_ENV: &str = "ONENET_SEED";

/// Every accepted key, in the order [`RunConfig::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "variant",
    "seed",
    "train",
    "tune",
    "test",
    "embeddings",
    "out_dir",
    "threads",
    "learning_rate",
    "beta1",
    "beta2",
    "epsilon",
    "dropout_keep",
    "stage_epochs",
    "single_task_epochs",
    "patience",
    "unk_prob",
    "clip_norm",
    "char_dim",
    "char_hidden",
    "word_dim",
    "word_hidden",
    "use_chars",
    "crf_score",
    "lowercase_fallback",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub variant: Variant,
    pub train: Option<PathBuf>,
    pub tune: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub threads: usize,
    pub model: ModelConfig,
    pub hyper: Hyperparams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: Variant::Joint,
            train: None,
            tune: None,
            test: None,
            embeddings: None,
            out_dir: PathBuf::from("run"),
            threads: 1,
            model: ModelConfig::default(),
            hyper: Hyperparams::default(),
        }
    }
}

pub fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

impl RunConfig {
    /// Parse config text. `base` resolves relative paths.
    pub fn parse(text: &str, source: &Path, base: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: source.to_path_buf(),
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set_with_base(k, v.trim(), base).map_err(|e| Error::Parse {
                path: source.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse(&text, path, base)
    }

    /// Set one key. Relative paths stay relative to the working directory.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.set_with_base(key, value, Path::new(""))
    }

    fn set_with_base(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let key = normalize_key(key);
        let k = key.as_str();
        let path = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() || base.as_os_str().is_empty() {
                p
            } else {
                base.join(p)
            }
        };
        let opt_path = |v: &str| if v.is_empty() || v == "none" { None } else { Some(path(v)) };
        let h = &mut self.hyper;
        let d = &mut self.model.dims;
        match k {
            "variant" => self.variant = value.parse()?,
            "seed" => h.seed = parse_num(k, value)?,
            "train" => self.train = opt_path(value),
            "tune" => self.tune = opt_path(value),
            "test" => self.test = opt_path(value),
            "embeddings" => self.embeddings = opt_path(value),
            "out_dir" => self.out_dir = path(value),
            "threads" => self.threads = parse_num(k, value)?,
            "learning_rate" => h.learning_rate = parse_num(k, value)?,
            "beta1" => h.beta1 = parse_num(k, value)?,
            "beta2" => h.beta2 = parse_num(k, value)?,
            "epsilon" => h.epsilon = parse_num(k, value)?,
            "dropout_keep" => h.dropout_keep = parse_num(k, value)?,
            "stage_epochs" => {
                let parts: Vec<&str> = value
                    .trim_matches(|c| c == '(' || c == ')' || c == '[' || c == ']')
                    .split(',')
                    .map(str::trim)
                    .collect();
                if parts.len() != 4 {
                    return Err(Error::Config(format!("`stage_epochs` needs four values, got `{value}`")));
                }
                for (slot, p) in h.stage_epochs.iter_mut().zip(parts) {
                    *slot = parse_num(k, p)?;
                }
            }
            "single_task_epochs" => h.single_task_epochs = parse_num(k, value)?,
            "patience" => h.patience = parse_num(k, value)?,
            "unk_prob" => h.unk_prob = parse_num(k, value)?,
            "clip_norm" => {
                h.clip_norm = if value == "none" { None } else { Some(parse_num(k, value)?) };
            }
            "char_dim" => d.char_dim = parse_num(k, value)?,
            "char_hidden" => d.char_hidden = parse_num(k, value)?,
            "word_dim" => d.word_dim = parse_num(k, value)?,
            "word_hidden" => d.word_hidden = parse_num(k, value)?,
            "use_chars" => self.model.use_chars = parse_bool(k, value)?,
            "crf_score" => self.model.crf_score = value.parse::<CrfScoreMode>()?,
            "lowercase_fallback" => self.model.lowercase_fallback = parse_bool(k, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Apply `ONENET_SEED` when it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.hyper.seed = v
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("{SEED_ENV}: cannot parse `{v}`: {e}")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.model.dims.validate()?;
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }

    /// The resolved configuration in the same `key = value` format.
    pub fn to_text(&self) -> String {
        let p = |v: &Option<PathBuf>| v.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        let h = &self.hyper;
        let d = &self.model.dims;
        let mut s = String::new();
        let e = h.stage_epochs;
        let values: Vec<(&str, String)> = vec![
            ("variant", self.variant.to_string()),
            ("seed", h.seed.to_string()),
            ("train", p(&self.train)),
            ("tune", p(&self.tune)),
            ("test", p(&self.test)),
            ("embeddings", p(&self.embeddings)),
            ("out_dir", self.out_dir.display().to_string()),
            ("threads", self.threads.to_string()),
            ("learning_rate", format!("{:e}", h.learning_rate)),
            ("beta1", h.beta1.to_string()),
            ("beta2", h.beta2.to_string()),
            ("epsilon", format!("{:e}", h.epsilon)),
            ("dropout_keep", h.dropout_keep.to_string()),
            ("stage_epochs", format!("{},{},{},{}", e[0], e[1], e[2], e[3])),
            ("single_task_epochs", h.single_task_epochs.to_string()),
            ("patience", h.patience.to_string()),
            ("unk_prob", h.unk_prob.to_string()),
            ("clip_norm", h.clip_norm.map_or("none".to_string(), |c| c.to_string())),
            ("char_dim", d.char_dim.to_string()),
            ("char_hidden", d.char_hidden.to_string()),
            ("word_dim", d.word_dim.to_string()),
            ("word_hidden", d.word_hidden.to_string()),
            ("use_chars", self.model.use_chars.to_string()),
            ("crf_score", self.model.crf_score.to_string()),
            ("lowercase_fallback", self.model.lowercase_fallback.to_string()),
        ];
        debug_assert_eq!(values.len(), KEYS.len());
        for (k, v) in values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
