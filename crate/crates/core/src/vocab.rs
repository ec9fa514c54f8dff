//! Character and word vocabularies. Index 0 is always UNK.

use std::collections::HashMap;

pub const UNK: usize = 0;
pub const UNK_WORD: &str = "<unk>";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl Default for CharVocab {
    fn default() -> Self {
        Self::new()
    }
}

impl CharVocab {
    pub fn new() -> Self {
        CharVocab {
            chars: vec!['\u{fffd}'],
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, c: char) -> usize {
        if let Some(&i) = self.index.get(&c) {
            return i;
        }
        self.chars.push(c);
        self.index.insert(c, self.chars.len() - 1);
        self.chars.len() - 1
    }

    pub fn lookup(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(UNK)
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Known characters in index order, excluding UNK.
    pub fn chars(&self) -> &[char] {
        &self.chars[1..]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordVocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<usize>,
    pretrained: Vec<bool>,
}

impl Default for WordVocab {
    fn default() -> Self {
        Self::new()
    }
}

impl WordVocab {
    pub fn new() -> Self {
        WordVocab {
            words: vec![UNK_WORD.to_string()],
            index: HashMap::new(),
            counts: vec![0],
            pretrained: vec![false],
        }
    }

    /// Count one training occurrence, adding the word if new.
    pub fn observe(&mut self, word: &str) -> usize {
        let i = self.insert(word);
        self.counts[i] += 1;
        i
    }

    pub fn insert(&mut self, word: &str) -> usize {
        if let Some(&i) = self.index.get(word) {
            return i;
        }
        self.words.push(word.to_string());
        self.counts.push(0);
        self.pretrained.push(false);
        let i = self.words.len() - 1;
        self.index.insert(word.to_string(), i);
        i
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Exact match first, then (optionally) the lowercased form, then UNK.
    pub fn lookup(&self, word: &str, lowercase_fallback: bool) -> usize {
        if let Some(i) = self.get(word) {
            return i;
        }
        if lowercase_fallback {
            let lower = word.to_lowercase();
            if lower != word {
                if let Some(i) = self.get(&lower) {
                    return i;
                }
            }
        }
        UNK
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn count(&self, i: usize) -> usize {
        self.counts[i]
    }

    pub fn is_singleton(&self, i: usize) -> bool {
        i != UNK && self.counts[i] == 1
    }

    pub fn is_pretrained(&self, i: usize) -> bool {
        self.pretrained[i]
    }

    pub fn set_pretrained(&mut self, i: usize) {
        self.pretrained[i] = true;
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Rebuild from stored parts (checkpoint loading).
    pub(crate) fn from_parts(words: Vec<String>, counts: Vec<usize>, pretrained: Vec<bool>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, w)| (w.clone(), i))
            .collect();
        WordVocab {
            words,
            index,
            counts,
            pretrained,
        }
    }
}
