//! Line-oriented corpus files.
//!
//! One JSON object per line with the fields `tokens`, `domain`, `intent` and
//! `slots`. Blank lines are ignored. An optional schema sidecar sits next to
//! the corpus as `<stem>.schema.json`.

use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use super::{CorpusSchema, Example};
use crate::error::{Error, Result};

pub fn schema_sidecar_path(corpus: &Path) -> PathBuf {
    corpus.with_extension("schema.json")
}

/// Parse and validate every record from `reader`. `path` is only used in
/// error messages.
pub fn read_examples<R: Read>(reader: R, path: &Path) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let ex: Example = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        ex.validate().map_err(parse_err)?;
        out.push(ex);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: no examples", path.display())));
    }
    Ok(out)
}

/// Read a corpus file and its schema.
///
/// The schema comes from the sidecar when one exists (and every example must
/// resolve against it); otherwise it is inferred from the examples.
pub fn parse_corpus(path: &Path) -> Result<(Vec<Example>, CorpusSchema)> {
    let file = fs::File::open(path)?;
    let examples = read_examples(file, path)?;
    let sidecar = schema_sidecar_path(path);
    let schema = if sidecar.exists() {
        let schema: CorpusSchema = serde_json::from_str(&fs::read_to_string(&sidecar)?)
            .map_err(|e| Error::Parse {
                path: sidecar.clone(),
                line: e.line(),
                message: e.to_string(),
            })?;
        schema.validate()?;
        for (i, ex) in examples.iter().enumerate() {
            let unknown = schema.unknown_labels(ex);
            if !unknown.is_empty() {
                return Err(Error::Data(format!(
                    "{}: example {} uses labels missing from {}: {}",
                    path.display(),
                    i + 1,
                    sidecar.display(),
                    unknown.join(", ")
                )));
            }
        }
        schema
    } else {
        CorpusSchema::infer(&examples)
    };
    Ok((examples, schema))
}

pub fn serialize_examples(examples: &[Example]) -> String {
    let mut s = String::new();
    for ex in examples {
        s.push_str(&serde_json::to_string(ex).expect("examples always serialize"));
        s.push('\n');
    }
    s
}

pub fn write_corpus(path: &Path, examples: &[Example]) -> Result<()> {
    fs::write(path, serialize_examples(examples))?;
    Ok(())
}

pub fn write_schema(path: &Path, schema: &CorpusSchema) -> Result<()> {
    let mut s = serde_json::to_string_pretty(schema)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}
