//! Orthography-sensitive word representations.
//!
//! A word is represented as the final state of a forward character LSTM,
//! the final state of a backward character LSTM (the one that has read the
//! whole word right to left) and a word embedding, concatenated in that
//! order. With the default sizes this is `25 + 25 + 100 = 150` dimensions.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::lstm::{run_lstm, LstmParams};
use crate::params::{Init, ParamId, ParameterStore, Partition};
use crate::vocab::{CharVocab, WordVocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CharEncoderParams {
    pub table: ParamId,
    pub forward: LstmParams,
    pub backward: LstmParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbeddingParams {
    /// `None` when the character path is ablated.
    pub chars: Option<CharEncoderParams>,
    pub words: ParamId,
    pub word_dim: usize,
    pub char_hidden: usize,
}

impl EmbeddingParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        char_vocab: &CharVocab,
        word_vocab: &WordVocab,
        char_dim: usize,
        char_hidden: usize,
        word_dim: usize,
        use_chars: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let chars = if use_chars {
            let table = store.add(
                "embed.chars",
                Partition::Shared,
                char_vocab.len(),
                char_dim,
                Init::Uniform((3.0 / char_dim as f64).sqrt()),
                rng,
            )?;
            let forward = LstmParams::new(store, "embed.char_fwd", char_dim, char_hidden, Partition::Shared, rng)?;
            let backward = LstmParams::new(store, "embed.char_bwd", char_dim, char_hidden, Partition::Shared, rng)?;
            Some(CharEncoderParams {
                table,
                forward,
                backward,
            })
        } else {
            None
        };
        let words = store.add(
            "embed.words",
            Partition::Shared,
            word_vocab.len(),
            word_dim,
            Init::Uniform((3.0 / word_dim as f64).sqrt()),
            rng,
        )?;
        Ok(EmbeddingParams {
            chars,
            words,
            word_dim,
            char_hidden: if use_chars { char_hidden } else { 0 },
        })
    }

    pub fn from_store(store: &ParameterStore) -> Result<Self> {
        let words = store
            .id("embed.words")
            .ok_or_else(|| Error::Checkpoint("missing tensor `embed.words`".into()))?;
        let chars = match store.id("embed.chars") {
            Some(table) => Some(CharEncoderParams {
                table,
                forward: LstmParams::from_store(store, "embed.char_fwd")?,
                backward: LstmParams::from_store(store, "embed.char_bwd")?,
            }),
            None => None,
        };
        Ok(EmbeddingParams {
            words,
            word_dim: store.get(words).cols(),
            char_hidden: chars.map_or(0, |c| c.forward.hidden_dim),
            chars,
        })
    }

    /// Dimension of one word representation.
    pub fn output_dim(&self) -> usize {
        2 * self.char_hidden + self.word_dim
    }

    /// Representation of `word`, whose word-embedding row is `word_row`.
    pub fn embed_word(
        &self,
        g: &mut Graph<'_>,
        char_vocab: &CharVocab,
        word: &str,
        word_row: usize,
    ) -> Result<NodeId> {
        if word.is_empty() {
            return Err(Error::Contract("cannot embed an empty word".into()));
        }
        let e_w = g.lookup(self.words, word_row)?;
        let Some(chars) = self.chars else {
            return Ok(e_w);
        };
        let inputs = word
            .chars()
            .map(|c| g.lookup(chars.table, char_vocab.lookup(c)))
            .collect::<Result<Vec<_>>>()?;
        let fwd = run_lstm(g, &inputs, &chars.forward, false)?;
        let bwd = run_lstm(g, &inputs, &chars.backward, true)?;
        let last = *fwd.last().expect("non-empty word");
        let first = bwd[0];
        g.concat(&[last, first, e_w])
    }
}

/// Read a plain-text word-vector file: one token followed by `dim` decimal
/// floats per line.
pub fn load_pretrained(path: &Path, dim: usize) -> Result<Vec<(String, Vec<f64>)>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else {
            continue;
        };
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|e| err(format!("bad float `{f}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != dim {
            return Err(err(format!("expected {dim} values for `{word}`, found {}", values.len())));
        }
        out.push((word.to_string(), values));
    }
    Ok(out)
}

/// Copy pretrained vectors into the rows of words the vocabulary already
/// knows, marking them pretrained. Returns how many rows were initialized.
pub fn apply_pretrained(
    store: &mut ParameterStore,
    params: &EmbeddingParams,
    vocab: &mut WordVocab,
    vectors: &[(String, Vec<f64>)],
) -> Result<usize> {
    let mut hits = 0;
    for (word, v) in vectors {
        if v.len() != params.word_dim {
            return Err(Error::shape(format!("pretrained vector `{word}`"), params.word_dim, v.len()));
        }
        if let Some(i) = vocab.get(word) {
            if vocab.is_pretrained(i) {
                continue;
            }
            let dim = params.word_dim;
            store.data_mut(params.words)[i * dim..(i + 1) * dim].copy_from_slice(v);
            vocab.set_pretrained(i);
            hits += 1;
        }
    }
    Ok(hits)
}
