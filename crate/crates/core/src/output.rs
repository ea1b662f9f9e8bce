//! Estimation output records shared by the main method and the baselines.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{ProbabilityScore, VoteScore};
use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::estimator::AreaScore;
use crate::geo::StationId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Weather,
    BaselineA,
    BaselineB,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Weather, Method::BaselineA, Method::BaselineB];

    pub fn name(self) -> &'static str {
        match self {
            Method::Weather => "weather",
            Method::BaselineA => "baseline_a",
            Method::BaselineB => "baseline_b",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

/// One ranked station. Which score fields are present depends on the method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub station_id: StationId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disagreements: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compared: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub votes: Option<u32>,
}

impl RankedEntry {
    fn bare(station_id: StationId) -> Self {
        Self {
            station_id,
            disagreements: None,
            compared: None,
            score: None,
            votes: None,
        }
    }
}

impl From<&AreaScore> for RankedEntry {
    fn from(a: &AreaScore) -> Self {
        Self {
            disagreements: Some(a.disagreements),
            compared: Some(a.compared),
            ..Self::bare(a.station_id)
        }
    }
}

impl From<&ProbabilityScore> for RankedEntry {
    fn from(a: &ProbabilityScore) -> Self {
        Self {
            score: Some(a.score),
            ..Self::bare(a.station_id)
        }
    }
}

impl From<&VoteScore> for RankedEntry {
    fn from(a: &VoteScore) -> Self {
        Self {
            votes: Some(a.votes),
            ..Self::bare(a.station_id)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub user_id: String,
    pub method: Method,
    pub ranked: Vec<RankedEntry>,
}

impl EstimateRecord {
    pub fn new<'a, T: 'a>(
        user_id: &str,
        method: Method,
        ranked: impl IntoIterator<Item = &'a T>,
        top_k: Option<usize>,
    ) -> Self
    where
        RankedEntry: From<&'a T>,
    {
        let ranked = ranked
            .into_iter()
            .take(top_k.unwrap_or(usize::MAX))
            .map(RankedEntry::from)
            .collect();
        Self {
            user_id: user_id.to_string(),
            method,
            ranked,
        }
    }
}

/// Ranked station ids per user.
pub type EstimationResult = BTreeMap<String, Vec<StationId>>;

pub fn to_estimation_result(records: &[EstimateRecord]) -> EstimationResult {
    records
        .iter()
        .map(|r| {
            (
                r.user_id.clone(),
                r.ranked.iter().map(|e| e.station_id).collect(),
            )
        })
        .collect()
}

pub fn records_to_jsonl(records: &[EstimateRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn save_records(path: impl AsRef<Path>, records: &[EstimateRecord]) -> Result<()> {
    write_atomic(path.as_ref(), &records_to_jsonl(records)?)
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<EstimateRecord>> {
    let path = path.as_ref();
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    body.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::parse(path, i as u64 + 1, e.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_serialisation_shape() {
        let scores = [
            AreaScore {
                station_id: StationId(4),
                disagreements: 0,
                compared: 5,
            },
            AreaScore {
                station_id: StationId(2),
                disagreements: 3,
                compared: 5,
            },
        ];
        let rec = EstimateRecord::new("u1", Method::Weather, &scores, Some(1));
        let line =
            String::from_utf8(records_to_jsonl(std::slice::from_ref(&rec)).unwrap()).unwrap();
        assert_eq!(
            line.trim(),
            r#"{"user_id":"u1","method":"weather","ranked":[{"station_id":4,"disagreements":0,"compared":5}]}"#
        );
        let votes = [VoteScore {
            station_id: StationId(1),
            votes: 2,
        }];
        let rec_b = EstimateRecord::new("u1", Method::BaselineB, &votes, None);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        save_records(&p, &[rec.clone(), rec_b.clone()]).unwrap();
        assert_eq!(load_records(&p).unwrap(), vec![rec, rec_b]);
    }

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("nope".parse::<Method>().is_err());
    }
}
