//! Selection of weather-related words by pointwise mutual information
//! between a word and the rain label of the messages it occurs in.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Serialize;

use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::pipeline::Corpus;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WordCounts {
    /// Occurrences in messages labelled dry / rain.
    pub by_label: [u64; 2],
    /// Distinct users who used the word.
    pub users: u64,
}

impl WordCounts {
    pub fn total(&self) -> u64 {
        self.by_label[0] + self.by_label[1]
    }
}

/// Word/label co-occurrence counts. Every token occurrence counts once.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CountTable {
    words: BTreeMap<String, WordCounts>,
    by_label: [u64; 2],
}

fn slot(label: bool) -> usize {
    usize::from(label)
}

impl CountTable {
    pub fn word(&self, w: &str) -> Option<&WordCounts> {
        self.words.get(w)
    }

    pub fn words(&self) -> impl Iterator<Item = (&str, &WordCounts)> {
        self.words.iter().map(|(w, c)| (w.as_str(), c))
    }

    pub fn label_total(&self, label: bool) -> u64 {
        self.by_label[slot(label)]
    }

    /// Total number of token occurrences.
    pub fn total(&self) -> u64 {
        self.by_label[0] + self.by_label[1]
    }
}

pub fn count_statistics(corpus: &Corpus) -> Result<CountTable> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut table = CountTable::default();
    for (_, messages) in corpus.users() {
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        for m in messages {
            for token in &m.tokens {
                let entry = table.words.entry(token.clone()).or_default();
                entry.by_label[slot(m.label)] += 1;
                if seen.insert(token) {
                    entry.users += 1;
                }
                table.by_label[slot(m.label)] += 1;
            }
        }
    }
    Ok(table)
}

/// Natural-log PMI of `word` and `label`. A word that never occurs with
/// `label` yields negative infinity.
pub fn pmi(table: &CountTable, word: &str, label: bool) -> Result<f64> {
    let counts = table
        .word(word)
        .filter(|c| c.total() > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("word {word:?} was never counted")))?;
    let label_total = table.label_total(label);
    if label_total == 0 {
        return Err(Error::InvalidArgument(format!(
            "label {label} never occurs"
        )));
    }
    let joint = counts.by_label[slot(label)];
    if joint == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let n = table.total() as f64;
    let p_joint = joint as f64 / n;
    let p_word = counts.total() as f64 / n;
    let p_label = label_total as f64 / n;
    Ok((p_joint / (p_word * p_label)).ln())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateParams {
    /// Words need strictly more occurrences than this.
    pub min_freq: u64,
    /// Words need at least this many distinct users.
    pub min_users: u64,
    pub top: usize,
}

impl Default for CandidateParams {
    fn default() -> Self {
        Self {
            min_freq: 10,
            min_users: 10,
            top: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub word: String,
    pub pmi: f64,
    pub freq: u64,
    pub users: u64,
}

/// Ranks frequent words by PMI with `label`, keeps the top entries, then
/// drops words used by too few people.
pub fn select_candidates(
    table: &CountTable,
    label: bool,
    params: CandidateParams,
) -> Vec<Candidate> {
    let mut ranked = Vec::new();
    for (word, counts) in table.words() {
        if counts.total() <= params.min_freq {
            continue;
        }
        let Ok(score) = pmi(table, word, label) else {
            continue;
        };
        if score == f64::NEG_INFINITY {
            continue;
        }
        ranked.push(Candidate {
            word: word.to_string(),
            pmi: score,
            freq: counts.total(),
            users: counts.users,
        });
    }
    ranked.sort_by(|a, b| b.pmi.total_cmp(&a.pmi).then_with(|| a.word.cmp(&b.word)));
    ranked.truncate(params.top);
    ranked.retain(|c| c.users >= params.min_users);
    ranked
}

pub fn candidates_to_csv(candidates: &[Candidate]) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for c in candidates {
        writer.serialize(c)?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::io("<memory>", e.into_error()))
}

/// Rain-indicating and dry-indicating words. The two sets never overlap.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WeatherLexicon {
    rain_words: BTreeSet<String>,
    norain_words: BTreeSet<String>,
}

impl WeatherLexicon {
    pub fn new(rain_words: BTreeSet<String>, norain_words: BTreeSet<String>) -> Result<Self> {
        if let Some(w) = rain_words.intersection(&norain_words).next() {
            return Err(Error::LexiconOverlap(w.clone()));
        }
        Ok(Self {
            rain_words,
            norain_words,
        })
    }

    pub fn rain_words(&self) -> &BTreeSet<String> {
        &self.rain_words
    }

    pub fn norain_words(&self) -> &BTreeSet<String> {
        &self.norain_words
    }

    pub fn contains(&self, word: &str) -> bool {
        self.rain_words.contains(word) || self.norain_words.contains(word)
    }

    pub fn is_empty(&self) -> bool {
        self.rain_words.is_empty() && self.norain_words.is_empty()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        write_atomic(
            &dir.join(RAIN_WORDS_FILE),
            word_list(&self.rain_words).as_bytes(),
        )?;
        write_atomic(
            &dir.join(NORAIN_WORDS_FILE),
            word_list(&self.norain_words).as_bytes(),
        )
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Self::new(
            load_word_list(dir.join(RAIN_WORDS_FILE))?,
            load_word_list(dir.join(NORAIN_WORDS_FILE))?,
        )
    }
}

pub const RAIN_WORDS_FILE: &str = "rain_words.txt";
pub const NORAIN_WORDS_FILE: &str = "norain_words.txt";

fn word_list(words: &BTreeSet<String>) -> String {
    words.iter().map(|w| format!("{w}\n")).collect()
}

/// Reads a curated list: one word per line, blank lines and `#` comment lines ignored.
pub fn load_word_list(path: impl AsRef<Path>) -> Result<BTreeSet<String>> {
    let path = path.as_ref();
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_word_list(&body))
}

pub fn parse_word_list(body: &str) -> BTreeSet<String> {
    body.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Combines PMI candidates with optional curated lists.
///
/// With a curated list, the result is its intersection with the candidates.
/// Without one, candidates whose PMI exceeds `auto_min_pmi` are used directly.
pub fn build_lexicon(
    rain_candidates: &[Candidate],
    norain_candidates: &[Candidate],
    curated_rain: Option<&BTreeSet<String>>,
    curated_norain: Option<&BTreeSet<String>>,
    auto_min_pmi: f64,
) -> Result<WeatherLexicon> {
    let pick = |cands: &[Candidate], curated: Option<&BTreeSet<String>>| -> BTreeSet<String> {
        match curated {
            Some(list) => cands
                .iter()
                .filter(|c| list.contains(&c.word))
                .map(|c| c.word.clone())
                .collect(),
            None => cands
                .iter()
                .filter(|c| c.pmi > auto_min_pmi)
                .map(|c| c.word.clone())
                .collect(),
        }
    };
    WeatherLexicon::new(
        pick(rain_candidates, curated_rain),
        pick(norain_candidates, curated_norain),
    )
}
