//! Message preprocessing: geotag filtering, area assignment, labelling,
//! entity stripping, tokenisation, weather-word filtering and home truth.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{local_date, write_atomic, ObservationTable, RawMessage, UtcOffset};
use crate::error::{Error, Result};
use crate::geo::{nearest_station_within, StationId, StationIndex};
use crate::lexicon::WeatherLexicon;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledMessage {
    pub user_id: String,
    pub station_id: StationId,
    pub date: NaiveDate,
    pub tokens: Vec<String>,
    /// `true` when it rained at the station on that date.
    pub label: bool,
}

/// Labelled messages in canonical order: by user, then date, then input order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    messages: Vec<LabeledMessage>,
}

impl Corpus {
    pub fn new(mut messages: Vec<LabeledMessage>) -> Self {
        // stable, so input order survives within (user, date)
        messages.sort_by(|a, b| (&a.user_id, a.date).cmp(&(&b.user_id, b.date)));
        Self { messages }
    }

    pub fn messages(&self) -> &[LabeledMessage] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Contiguous per-user slices in user order.
    pub fn users(&self) -> impl Iterator<Item = (&str, &[LabeledMessage])> {
        self.messages
            .chunk_by(|a, b| a.user_id == b.user_id)
            .map(|chunk| (chunk[0].user_id.as_str(), chunk))
    }

    pub fn user_count(&self) -> usize {
        self.users().count()
    }

    pub fn filter(&self, mut keep: impl FnMut(&LabeledMessage) -> bool) -> Corpus {
        Corpus {
            messages: self.messages.iter().filter(|m| keep(m)).cloned().collect(),
        }
    }

    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for m in &self.messages {
            serde_json::to_writer(&mut out, m)?;
            out.push(b'\n');
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Corpus> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut messages = Vec::new();
        for (i, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let m: LabeledMessage = serde_json::from_str(line)
                .map_err(|e| Error::parse(path, i as u64 + 1, e.to_string()))?;
            messages.push(m);
        }
        Ok(Corpus::new(messages))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_jsonl()?)
    }
}

fn is_entity(token: &str) -> bool {
    token.starts_with('#') || token.starts_with('@')
}

fn strip_url(token: &str) -> &str {
    let cut = [token.find("http://"), token.find("https://")]
        .into_iter()
        .flatten()
        .min();
    match cut {
        Some(i) => &token[..i],
        None => token,
    }
}

/// Removes hashtags, mentions and URLs, collapsing the leftover whitespace.
pub fn strip_entities(text: &str) -> String {
    text.split_whitespace()
        .filter(|t| !is_entity(t))
        .map(strip_url)
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Pre-tokenised words are kept as given (minus entities); raw text is
/// whitespace split and lowercased.
pub fn tokenize(message: &RawMessage) -> Vec<String> {
    match &message.tokens {
        Some(tokens) => tokens
            .iter()
            .filter(|t| !is_entity(t))
            .map(|t| strip_url(t))
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect(),
        None => strip_entities(&message.text)
            .split_whitespace()
            .map(str::to_lowercase)
            .collect(),
    }
}

#[derive(Debug, Clone)]
pub struct PhaseAParams {
    pub radius_km: f64,
    pub bot_sources: BTreeSet<String>,
    pub offset: UtcOffset,
}

impl Default for PhaseAParams {
    fn default() -> Self {
        Self {
            radius_km: 10.0,
            bot_sources: BTreeSet::new(),
            offset: UtcOffset::JST,
        }
    }
}

/// Per-step drop counters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub input: usize,
    pub skipped_malformed: usize,
    pub no_coords: usize,
    pub bot_source: usize,
    pub no_station: usize,
    pub no_observation: usize,
    pub no_tokens: usize,
    pub phase_a_kept: usize,
    pub no_weather_words: usize,
    pub phase_b_kept: usize,
    pub users_too_few_messages: usize,
    pub users_no_home: usize,
    pub messages_of_dropped_users: usize,
    pub users_with_home: usize,
    pub final_messages: usize,
}

/// Steps 1 to 6: geotag, bot, area, label, entity and tokenisation stages.
pub fn preprocess_phase_a(
    messages: &[RawMessage],
    index: &StationIndex,
    observations: &ObservationTable,
    params: &PhaseAParams,
    summary: &mut PreprocessSummary,
) -> Result<Corpus> {
    summary.input += messages.len();
    let mut kept = Vec::new();
    for m in messages {
        let Some(coords) = m.coords else {
            summary.no_coords += 1;
            continue;
        };
        if params.bot_sources.contains(&m.source) {
            summary.bot_source += 1;
            continue;
        }
        let Some(station_id) = nearest_station_within(coords, index, params.radius_km)? else {
            summary.no_station += 1;
            continue;
        };
        let date = local_date(m.timestamp, params.offset);
        let Some(label) = observations.get(station_id, date) else {
            summary.no_observation += 1;
            continue;
        };
        let tokens = tokenize(m);
        if tokens.is_empty() {
            summary.no_tokens += 1;
            continue;
        }
        kept.push(LabeledMessage {
            user_id: m.user_id.clone(),
            station_id,
            date,
            tokens,
            label,
        });
    }
    summary.phase_a_kept += kept.len();
    Ok(Corpus::new(kept))
}

/// Step 7: keep only messages containing at least one lexicon word.
pub fn preprocess_phase_b(
    corpus: &Corpus,
    lexicon: &WeatherLexicon,
    summary: &mut PreprocessSummary,
) -> Corpus {
    let out = corpus.filter(|m| m.tokens.iter().any(|t| lexicon.contains(t)));
    summary.no_weather_words += corpus.len() - out.len();
    summary.phase_b_kept += out.len();
    out
}

pub type HomeTruth = BTreeMap<String, StationId>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomeRule {
    /// A user needs strictly more messages than this.
    pub min_messages: usize,
    /// Inclusive share of messages that must come from one station.
    pub threshold: f64,
}

impl Default for HomeRule {
    fn default() -> Self {
        Self {
            min_messages: 10,
            threshold: 0.9,
        }
    }
}

/// Assigns each qualifying user a home station and drops everyone else.
pub fn assign_home_truth(
    corpus: &Corpus,
    rule: HomeRule,
    summary: &mut PreprocessSummary,
) -> (HomeTruth, Corpus) {
    let mut truth = HomeTruth::new();
    for (user, msgs) in corpus.users() {
        if msgs.len() <= rule.min_messages {
            summary.users_too_few_messages += 1;
            summary.messages_of_dropped_users += msgs.len();
            continue;
        }
        let mut counts: BTreeMap<StationId, usize> = BTreeMap::new();
        for m in msgs {
            *counts.entry(m.station_id).or_default() += 1;
        }
        // max_by_key returns the last maximum; iterate in reverse so the lowest id wins
        let (&station, &count) = counts.iter().rev().max_by_key(|(_, &c)| c).unwrap();
        if count as f64 / msgs.len() as f64 >= rule.threshold {
            truth.insert(user.to_string(), station);
        } else {
            summary.users_no_home += 1;
            summary.messages_of_dropped_users += msgs.len();
        }
    }
    summary.users_with_home = truth.len();
    let filtered = corpus.filter(|m| truth.contains_key(&m.user_id));
    summary.final_messages = filtered.len();
    (truth, filtered)
}

pub fn truth_to_csv(truth: &HomeTruth) -> Vec<u8> {
    let mut out = String::from("user_id,station_id\n");
    for (user, station) in truth {
        out.push_str(&format!("{user},{station}\n"));
    }
    out.into_bytes()
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<HomeTruth> {
    #[derive(Deserialize)]
    struct Row {
        user_id: String,
        station_id: u32,
    }
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, 0, format!("{other:?}")),
    })?;
    let mut truth = HomeTruth::new();
    for row in reader.deserialize::<Row>() {
        let row = row
            .map_err(|e| Error::parse(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        truth.insert(row.user_id, StationId(row.station_id));
    }
    Ok(truth)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Deterministic per-user train/test assignment from a seeded SHA-256 of the user id.
pub fn user_split(user_id: &str, seed: u64, train_fraction: f64) -> Split {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(user_id.as_bytes());
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    let unit = (u64::from_le_bytes(head) >> 11) as f64 / (1u64 << 53) as f64;
    if unit < train_fraction {
        Split::Train
    } else {
        Split::Test
    }
}
