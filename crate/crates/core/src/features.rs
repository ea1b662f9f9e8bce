//! Vocabulary and binary bag-of-words vectors.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::pipeline::Corpus;

/// Alphabetically ordered words; a word's position is its feature index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds from words in any order; duplicates are collapsed.
    pub fn from_words(words: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut words: Vec<String> = words.into_iter().collect();
        words.sort();
        words.dedup();
        if words.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Ok(Self { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn index_of(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    /// SHA-256 over the newline-terminated word list, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for w in &self.words {
            hasher.update(w.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    /// One word per line, line number = index.
    pub fn to_text(&self) -> String {
        self.words.iter().map(|w| format!("{w}\n")).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_text().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let words: Vec<String> = body.lines().map(str::to_string).collect();
        if let Some(i) = words.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::parse(
                path,
                i as u64 + 2,
                "vocabulary is not strictly sorted",
            ));
        }
        Self::from_words(words)
    }
}

/// Words occurring at least twice across all messages.
pub fn build_vocabulary(corpus: &Corpus) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for m in corpus.messages() {
        for t in &m.tokens {
            *counts.entry(t).or_default() += 1;
        }
    }
    Vocabulary::from_words(
        counts
            .into_iter()
            .filter(|&(_, c)| c >= 2)
            .map(|(w, _)| w.to_string()),
    )
}

/// Sparse binary vector: the sorted set of active feature indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeatureVector {
    active: Vec<u32>,
    dim: usize,
}

impl FeatureVector {
    pub fn new(mut active: Vec<u32>, dim: usize) -> Result<Self> {
        active.sort_unstable();
        active.dedup();
        if let Some(&last) = active.last() {
            if last as usize >= dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: last as usize + 1,
                });
            }
        }
        Ok(Self { active, dim })
    }

    pub fn active(&self) -> &[u32] {
        &self.active
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.active.len()
    }
}

pub fn vectorize<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> FeatureVector {
    let mut active: Vec<u32> = tokens
        .iter()
        .filter_map(|t| vocab.index_of(t.as_ref()))
        .collect();
    active.sort_unstable();
    active.dedup();
    FeatureVector {
        active,
        dim: vocab.len(),
    }
}
