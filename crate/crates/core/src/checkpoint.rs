//! Versioned single-file checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ONENETCK" u32 version
//! u32 n, n bytes JSON header (config, label space, vocabulary sizes)
//! u32 n, n x u32 characters (UNK excluded)
//! u32 n, n x (u32 len, UTF-8 word, u64 count, u8 pretrained)   (UNK first)
//! u32 n, n x (u32 len, name, u32 len, partition, u64 rows, u64 cols, f64 data)
//! 32-byte SHA-256 of everything above
//! ```
//!
//! A text manifest listing tensor names, shapes and checksums is written
//! next to the file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::ModelSet;
use crate::model::{LabelSpace, ModelConfig, OneNet};
use crate::params::{ParameterStore, Partition};
use crate::vocab::{CharVocab, WordVocab};

pub const MAGIC: &[u8; 8] = b"ONENETCK";
pub const FORMAT_VERSION: u32 = 1;
pub const MODEL_INDEX: &str = "models.json";

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    labels: LabelSpace,
    char_vocab_size: usize,
    word_vocab_size: usize,
    tensors: usize,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

/// Encode a network. The output is a pure function of the network.
pub fn to_bytes(model: &OneNet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let header = Header {
        config: model.config,
        labels: model.labels.clone(),
        char_vocab_size: model.chars.len(),
        word_vocab_size: model.words.len(),
        tensors: model.store.len(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    put_u32(&mut out, json.len());
    out.extend_from_slice(&json);

    let chars = model.chars.chars();
    put_u32(&mut out, chars.len());
    for &c in chars {
        out.extend_from_slice(&(c as u32).to_le_bytes());
    }
    put_u32(&mut out, model.words.len());
    for (i, w) in model.words.words().iter().enumerate() {
        put_str(&mut out, w);
        put_u64(&mut out, model.words.count(i));
        out.push(model.words.is_pretrained(i) as u8);
    }
    put_u32(&mut out, model.store.len());
    for (_, t) in model.store.iter() {
        put_str(&mut out, t.name());
        put_str(&mut out, t.partition().as_str());
        put_u64(&mut out, t.rows());
        put_u64(&mut out, t.cols());
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} out of range")))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(format!("invalid UTF-8: {e}")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<OneNet> {
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a OneNet checkpoint".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()? as u32;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let n = r.u32()?;
    let header: Header = serde_json::from_slice(r.take(n)?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;

    let mut chars = CharVocab::new();
    let n = r.u32()?;
    for _ in 0..n {
        let cp = r.u32()? as u32;
        let c = char::from_u32(cp).ok_or_else(|| Error::Checkpoint(format!("invalid character {cp:#x}")))?;
        chars.insert(c);
    }
    let n = r.u32()?;
    let (mut words, mut counts, mut pretrained) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        words.push(r.str()?);
        counts.push(r.u64()?);
        pretrained.push(r.take(1)?[0] != 0);
    }
    let words = WordVocab::from_parts(words, counts, pretrained);
    if chars.len() != header.char_vocab_size || words.len() != header.word_vocab_size {
        return Err(Error::Checkpoint("vocabulary sizes disagree with the header".into()));
    }

    let mut store = ParameterStore::new();
    let n = r.u32()?;
    if n != header.tensors {
        return Err(Error::Checkpoint("tensor count disagrees with the header".into()));
    }
    for _ in 0..n {
        let name = r.str()?;
        let part = r.str()?;
        let partition = Partition::parse(&part)
            .ok_or_else(|| Error::Checkpoint(format!("unknown partition `{part}` for `{name}`")))?;
        let rows = r.u64()?;
        let cols = r.u64()?;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` too large")))?;
        let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` too large")))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        store.add_with_data(&name, partition, rows, cols, data)?;
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after tensors".into()));
    }
    OneNet::from_parts(header.config, chars, words, header.labels, store)
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// Human-readable listing of the checkpoint contents.
pub fn manifest(model: &OneNet, file_bytes: &[u8]) -> String {
    let mut s = format!("format onenet-checkpoint {FORMAT_VERSION}\nfile-sha256 {}\n", sha256_hex(file_bytes));
    for (_, t) in model.store.iter() {
        let mut raw = Vec::with_capacity(t.len() * 8);
        for x in t.data() {
            raw.extend_from_slice(&x.to_le_bytes());
        }
        s.push_str(&format!(
            "tensor {} {} {}x{} {}\n",
            t.name(),
            t.partition(),
            t.rows(),
            t.cols(),
            sha256_hex(&raw)
        ));
    }
    s
}

/// Write `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Save a network and its manifest. Returns the file's SHA-256.
pub fn save(model: &OneNet, path: &Path) -> Result<String> {
    let bytes = to_bytes(model);
    write_atomic(path, &bytes)?;
    write_atomic(&manifest_path(path), manifest(model, &bytes).as_bytes())?;
    Ok(sha256_hex(&bytes))
}

pub fn load(path: &Path) -> Result<OneNet> {
    let bytes = fs::read(path)?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelIndexEntry {
    pub role: String,
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelIndex {
    pub format_version: u32,
    pub models: Vec<ModelIndexEntry>,
}

/// Save every network of `set` into `dir` with a `models.json` index.
pub fn save_set(set: &ModelSet, dir: &Path) -> Result<ModelIndex> {
    fs::create_dir_all(dir)?;
    let mut models = Vec::new();
    for (role, m) in set.roles() {
        let file = format!("{role}.ckpt");
        let sha256 = save(m, &dir.join(&file))?;
        models.push(ModelIndexEntry { role, file, sha256 });
    }
    let index = ModelIndex {
        format_version: FORMAT_VERSION,
        models,
    };
    let mut json = serde_json::to_string_pretty(&index)?;
    json.push('\n');
    write_atomic(&dir.join(MODEL_INDEX), json.as_bytes())?;
    Ok(index)
}

pub fn load_set(dir: &Path) -> Result<ModelSet> {
    let path = dir.join(MODEL_INDEX);
    let index: ModelIndex = serde_json::from_str(&fs::read_to_string(&path)?)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut set = ModelSet::default();
    for e in &index.models {
        let bytes = fs::read(dir.join(&e.file))?;
        if sha256_hex(&bytes) != e.sha256 {
            return Err(Error::Checkpoint(format!("{}: checksum differs from the index", e.file)));
        }
        set.insert_role(&e.role, from_bytes(&bytes)?)?;
    }
    Ok(set)
}
