//! Local-word baselines built on unsmoothed per-area unigram probabilities.
//!
//! Baseline A sums `p(word | area)` over every token a user wrote and picks the
//! largest total. Baseline B locates each message the same way and takes a
//! majority vote over the messages.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::geo::{StationId, StationIndex};
use crate::pipeline::{Corpus, LabeledMessage};

#[derive(Debug, Clone, Default, PartialEq)]
struct AreaCounts {
    total: u64,
    words: HashMap<String, u64>,
}

/// Maximum-likelihood `p(word | area)` for every station in the index.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaWordModel {
    areas: BTreeMap<StationId, AreaCounts>,
}

impl AreaWordModel {
    pub fn probability(&self, word: &str, area: StationId) -> f64 {
        match self.areas.get(&area) {
            Some(a) if a.total > 0 => {
                a.words.get(word).copied().unwrap_or(0) as f64 / a.total as f64
            }
            _ => 0.0,
        }
    }

    pub fn token_total(&self, area: StationId) -> u64 {
        self.areas.get(&area).map_or(0, |a| a.total)
    }

    pub fn areas(&self) -> impl Iterator<Item = StationId> + '_ {
        self.areas.keys().copied()
    }

    fn score<S: AsRef<str>>(&self, tokens: &[S], area: StationId) -> f64 {
        tokens
            .iter()
            .map(|t| self.probability(t.as_ref(), area))
            .sum()
    }
}

/// Messages from stations missing in `index` are ignored.
pub fn fit_area_word_model(corpus: &Corpus, index: &StationIndex) -> AreaWordModel {
    let mut areas: BTreeMap<StationId, AreaCounts> =
        index.ids().map(|id| (id, AreaCounts::default())).collect();
    for m in corpus.messages() {
        if let Some(area) = areas.get_mut(&m.station_id) {
            for t in &m.tokens {
                *area.words.entry(t.clone()).or_default() += 1;
                area.total += 1;
            }
        }
    }
    AreaWordModel { areas }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityScore {
    pub station_id: StationId,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteScore {
    pub station_id: StationId,
    pub votes: u32,
}

fn by_score_desc(a: &ProbabilityScore, b: &ProbabilityScore) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.station_id.cmp(&b.station_id))
}

fn score_areas<S: AsRef<str>>(
    tokens: &[S],
    model: &AreaWordModel,
    index: &StationIndex,
) -> Vec<ProbabilityScore> {
    let mut scores: Vec<ProbabilityScore> = index
        .ids()
        .map(|station_id| ProbabilityScore {
            station_id,
            score: model.score(tokens, station_id),
        })
        .collect();
    scores.sort_by(by_score_desc);
    scores
}

/// Baseline A: all of a user's token occurrences pooled into one score per area.
pub fn baseline_a_rank(
    messages: &[LabeledMessage],
    model: &AreaWordModel,
    index: &StationIndex,
) -> Vec<ProbabilityScore> {
    let tokens: Vec<&str> = messages
        .iter()
        .flat_map(|m| m.tokens.iter().map(String::as_str))
        .collect();
    score_areas(&tokens, model, index)
}

pub fn baseline_b_locate_message<S: AsRef<str>>(
    tokens: &[S],
    model: &AreaWordModel,
    index: &StationIndex,
) -> StationId {
    score_areas(tokens, model, index)[0].station_id
}

/// Baseline B: per-message locations tallied into votes.
pub fn baseline_b_rank(
    messages: &[LabeledMessage],
    model: &AreaWordModel,
    index: &StationIndex,
) -> Vec<VoteScore> {
    let mut votes: BTreeMap<StationId, u32> = index.ids().map(|id| (id, 0)).collect();
    for m in messages {
        *votes
            .get_mut(&baseline_b_locate_message(&m.tokens, model, index))
            .expect("located station comes from the index") += 1;
    }
    let mut ranked: Vec<VoteScore> = votes
        .into_iter()
        .map(|(station_id, votes)| VoteScore { station_id, votes })
        .collect();
    ranked.sort_by(|a, b| b.votes.cmp(&a.votes).then(a.station_id.cmp(&b.station_id)));
    ranked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::tests::station;
    use chrono::NaiveDate;

    fn msg(station_id: u32, tokens: &[&str]) -> LabeledMessage {
        LabeledMessage {
            user_id: format!("u{station_id}"),
            station_id: StationId(station_id),
            date: NaiveDate::from_ymd_opt(2016, 1, 1).unwrap(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            label: false,
        }
    }

    fn index(ids: &[u32]) -> StationIndex {
        StationIndex::new(
            ids.iter()
                .map(|&i| station(i, 35.0, 135.0 + i as f64 * 0.1, "P"))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn fitted_probabilities() {
        let idx = index(&[1, 2, 3]);
        let model = fit_area_word_model(
            &Corpus::new(vec![msg(1, &["a", "a", "b"]), msg(2, &["c"])]),
            &idx,
        );
        assert!((model.probability("a", StationId(1)) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(model.probability("c", StationId(1)), 0.0);
        assert_eq!(model.probability("a", StationId(3)), 0.0);
        assert_eq!(model.token_total(StationId(3)), 0);
        let sum: f64 = ["a", "b"]
            .iter()
            .map(|w| model.probability(w, StationId(1)))
            .sum();
        assert!((sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn baseline_a_unique_support() {
        let idx = index(&[1, 2]);
        let model = fit_area_word_model(
            &Corpus::new(vec![msg(1, &["x", "y"]), msg(2, &["y"])]),
            &idx,
        );
        let ranked = baseline_a_rank(&[msg(9, &["x"])], &model, &idx);
        assert_eq!(ranked[0].station_id, StationId(1));
    }

    #[test]
    fn baseline_a_uniform_ties_lowest_id() {
        let idx = index(&[4, 2, 6]);
        let corpus = Corpus::new(vec![
            msg(4, &["a", "b"]),
            msg(2, &["b", "a"]),
            msg(6, &["a", "b"]),
        ]);
        let model = fit_area_word_model(&corpus, &idx);
        let ranked = baseline_a_rank(&[msg(9, &["a", "b", "a"])], &model, &idx);
        let ids: Vec<_> = ranked.iter().map(|s| s.station_id.0).collect();
        assert_eq!(ids, vec![2, 4, 6]);
        assert!(ranked.windows(2).all(|w| w[0].score == w[1].score));
    }

    #[test]
    fn baseline_a_hand_summed_scores() {
        // area 1: p(a)=0.9 p(b)=0.1 ; area 2: p(a)=0.4 p(b)=0.6
        let idx = index(&[1, 2]);
        let mut t1 = vec!["a"; 9];
        t1.push("b");
        let mut t2 = vec!["a"; 2];
        t2.extend(["b"; 3]);
        let model = fit_area_word_model(&Corpus::new(vec![msg(1, &t1), msg(2, &t2)]), &idx);
        let user = [msg(9, &["a"]), msg(9, &["zzz"])];
        let ranked = baseline_a_rank(&user, &model, &idx);
        let brute = |area: u32| -> f64 {
            user.iter()
                .flat_map(|m| &m.tokens)
                .map(|t| model.probability(t, StationId(area)))
                .sum()
        };
        assert!((brute(1) - 0.9).abs() < 1e-15 && (brute(2) - 0.4).abs() < 1e-15);
        assert_eq!(ranked[0].station_id, StationId(1));
        assert_eq!(ranked[0].score, brute(1));
        assert_eq!(ranked[1].score, brute(2));
    }

    #[test]
    fn baseline_b_locate() {
        let idx = index(&[1, 2]);
        // p(w|1)=0.1, p(w|2)=0.3
        let mut c1 = vec!["w"];
        c1.extend(["n"; 9]);
        let mut c2 = vec!["w"; 3];
        c2.extend(["n"; 7]);
        let model = fit_area_word_model(
            &Corpus::new(vec![msg(1, &c1), msg(2, &c2), msg(2, &["only2"])]),
            &idx,
        );
        assert_eq!(
            baseline_b_locate_message(&["only2"], &model, &idx),
            StationId(2)
        );
        assert_eq!(
            baseline_b_locate_message(&["zzz"], &model, &idx),
            StationId(1)
        );
        let idx_b = index(&[1, 2]);
        let model_b = fit_area_word_model(&Corpus::new(vec![msg(1, &c1), msg(2, &c2)]), &idx_b);
        assert!((model_b.probability("w", StationId(1)) - 0.1).abs() < 1e-15);
        assert!((model_b.probability("w", StationId(2)) - 0.3).abs() < 1e-15);
        assert_eq!(
            baseline_b_locate_message(&["w"], &model_b, &idx_b),
            StationId(2)
        );
    }

    #[test]
    fn baseline_b_votes() {
        let idx = index(&[2, 3, 5, 8]);
        let corpus = Corpus::new(vec![
            msg(2, &["two"]),
            msg(3, &["three"]),
            msg(5, &["five"]),
        ]);
        let model = fit_area_word_model(&corpus, &idx);
        let ranked = baseline_b_rank(
            &[msg(9, &["two"]), msg(9, &["two"]), msg(9, &["two"])],
            &model,
            &idx,
        );
        assert_eq!(
            ranked[0],
            VoteScore {
                station_id: StationId(2),
                votes: 3
            }
        );

        let user = [
            msg(9, &["five"]),
            msg(9, &["three"]),
            msg(9, &["five"]),
            msg(9, &["three"]),
        ];
        let ranked = baseline_b_rank(&user, &model, &idx);
        assert_eq!(ranked[0].station_id, StationId(3));
        assert_eq!(ranked[1].station_id, StationId(5));
        // zero-vote stations follow in id order
        assert_eq!(ranked[2].station_id, StationId(2));
        assert_eq!(ranked[3].station_id, StationId(8));
    }

    #[test]
    fn baseline_b_tally_matches_recount() {
        let idx = index(&[1, 2, 3]);
        let corpus = Corpus::new(vec![msg(1, &["a"]), msg(2, &["b"]), msg(3, &["c"])]);
        let model = fit_area_word_model(&corpus, &idx);
        let user: Vec<_> = ["a", "a", "b", "a", "c"]
            .iter()
            .map(|w| msg(9, &[w]))
            .collect();
        let ranked = baseline_b_rank(&user, &model, &idx);
        let mut recount: BTreeMap<StationId, u32> = BTreeMap::new();
        for m in &user {
            *recount
                .entry(baseline_b_locate_message(&m.tokens, &model, &idx))
                .or_default() += 1;
        }
        let votes: Vec<_> = ranked.iter().map(|v| (v.station_id.0, v.votes)).collect();
        assert_eq!(votes, vec![(1, 3), (2, 1), (3, 1)]);
        for v in &ranked {
            assert_eq!(recount.get(&v.station_id).copied().unwrap_or(0), v.votes);
        }
        assert_eq!(
            ranked.iter().map(|v| v.votes).sum::<u32>(),
            user.len() as u32
        );
    }
}
