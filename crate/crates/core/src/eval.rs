//! Precision@k with a correct-distance threshold, overall and by prefecture.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{StationId, StationIndex};
use crate::output::EstimationResult;
use crate::pipeline::HomeTruth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// Divide every prefecture's count by the total number of users.
    #[default]
    AllUsers,
    /// Divide by the number of users whose home is in the prefecture.
    PerGroup,
}

fn check_params(k: usize, d_km: f64) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if !(d_km > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "distance must be positive, got {d_km}"
        )));
    }
    Ok(())
}

fn home_of(user: &str, truth: &HomeTruth) -> Result<StationId> {
    truth
        .get(user)
        .copied()
        .ok_or_else(|| Error::MissingTruth(user.to_string()))
}

/// Whether any of the top `k` stations lies strictly within `d_km` of `home`
/// and, when `same_prefecture` is set, shares its prefecture.
fn hit(
    ranked: &[StationId],
    home: StationId,
    index: &StationIndex,
    k: usize,
    d_km: f64,
    same_prefecture: bool,
) -> Result<bool> {
    let home_pref = &index.station(home)?.prefecture;
    for &candidate in ranked.iter().take(k) {
        if index.distance_km(candidate, home)? < d_km
            && (!same_prefecture || &index.station(candidate)?.prefecture == home_pref)
        {
            return Ok(true);
        }
    }
    Ok(false)
}

pub fn precision_at_k(
    results: &EstimationResult,
    truth: &HomeTruth,
    index: &StationIndex,
    k: usize,
    d_km: f64,
) -> Result<f64> {
    check_params(k, d_km)?;
    if results.is_empty() {
        return Err(Error::InvalidArgument("no users to evaluate".into()));
    }
    let mut correct = 0usize;
    for (user, ranked) in results {
        if hit(ranked, home_of(user, truth)?, index, k, d_km, false)? {
            correct += 1;
        }
    }
    Ok(correct as f64 / results.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrefectureStat {
    pub users: usize,
    pub correct: usize,
    pub precision: f64,
}

/// Per-prefecture precision, where a hit must also fall in the user's home
/// prefecture. Prefectures without users are absent.
pub fn precision_by_prefecture(
    results: &EstimationResult,
    truth: &HomeTruth,
    index: &StationIndex,
    k: usize,
    d_km: f64,
    denominator: Denominator,
) -> Result<BTreeMap<String, PrefectureStat>> {
    check_params(k, d_km)?;
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (user, ranked) in results {
        let home = home_of(user, truth)?;
        let entry = tally
            .entry(index.station(home)?.prefecture.clone())
            .or_default();
        entry.0 += 1;
        if hit(ranked, home, index, k, d_km, true)? {
            entry.1 += 1;
        }
    }
    let total = results.len();
    Ok(tally
        .into_iter()
        .map(|(pref, (users, correct))| {
            let denom = match denominator {
                Denominator::AllUsers => total,
                Denominator::PerGroup => users,
            };
            (
                pref,
                PrefectureStat {
                    users,
                    correct,
                    precision: correct as f64 / denom as f64,
                },
            )
        })
        .collect())
}

/// Unweighted mean over the prefectures present.
pub fn macro_average<'a>(values: impl IntoIterator<Item = (&'a String, &'a f64)>) -> Result<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), (_, &v)| (s + v, n + 1));
    if n == 0 {
        return Err(Error::InvalidArgument(
            "macro average of no prefectures".into(),
        ));
    }
    Ok(sum / n as f64)
}

/// Parses `start:end:step` into the inclusive list of distances.
pub fn parse_sweep(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidArgument(format!("bad sweep {text:?}, expected start:end:step"));
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let [start, end, step] = parts[..] else {
        return Err(bad());
    };
    if !(start > 0.0 && step > 0.0 && end >= start) {
        return Err(bad());
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + step * i as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub d: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefectureReport {
    pub k: usize,
    pub d: f64,
    pub denominator: Denominator,
    pub prefectures: BTreeMap<String, PrefectureStat>,
    pub macro_average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub users: usize,
    pub sweep: Vec<SweepRow>,
    pub by_prefecture: PrefectureReport,
}

#[derive(Debug, Clone)]
pub struct EvalParams {
    pub k_values: Vec<usize>,
    pub d_values: Vec<f64>,
    pub prefecture_k: usize,
    pub prefecture_d: f64,
    pub denominator: Denominator,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            k_values: vec![1, 3, 5],
            d_values: (1..=16).map(|i| i as f64 * 10.0).collect(),
            prefecture_k: 1,
            prefecture_d: 10.0,
            denominator: Denominator::AllUsers,
        }
    }
}

pub fn evaluate(
    results: &EstimationResult,
    truth: &HomeTruth,
    index: &StationIndex,
    params: &EvalParams,
) -> Result<EvalReport> {
    let mut sweep = Vec::new();
    for &k in &params.k_values {
        for &d in &params.d_values {
            sweep.push(SweepRow {
                k,
                d,
                precision: precision_at_k(results, truth, index, k, d)?,
            });
        }
    }
    let prefectures = precision_by_prefecture(
        results,
        truth,
        index,
        params.prefecture_k,
        params.prefecture_d,
        params.denominator,
    )?;
    let precisions: BTreeMap<String, f64> = prefectures
        .iter()
        .map(|(p, s)| (p.clone(), s.precision))
        .collect();
    Ok(EvalReport {
        users: results.len(),
        sweep,
        by_prefecture: PrefectureReport {
            k: params.prefecture_k,
            d: params.prefecture_d,
            denominator: params.denominator,
            macro_average: macro_average(&precisions)?,
            prefectures,
        },
    })
}

impl EvalReport {
    pub fn sweep_csv(&self) -> String {
        let mut out = String::from("k,d,precision\n");
        for r in &self.sweep {
            writeln!(out, "{},{},{}", r.k, r.d, r.precision).unwrap();
        }
        out
    }

    pub fn prefecture_csv(&self) -> String {
        let mut out = String::from("prefecture,users,precision\n");
        for (p, s) in &self.by_prefecture.prefectures {
            writeln!(out, "{},{},{}", p, s.users, s.precision).unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::tests::station;
    use crate::geo::{haversine_km, offset_km, GeoPoint, Station};

    fn results(rows: &[(&str, &[u32])]) -> EstimationResult {
        rows.iter()
            .map(|(u, r)| (u.to_string(), r.iter().map(|&i| StationId(i)).collect()))
            .collect()
    }

    fn truth(rows: &[(&str, u32)]) -> HomeTruth {
        rows.iter()
            .map(|(u, s)| (u.to_string(), StationId(*s)))
            .collect()
    }

    fn spaced_index() -> StationIndex {
        // station 1 at origin, station 2 60 km north, station 3 200 km east
        let o = GeoPoint::new(35.0, 135.0).unwrap();
        let n = offset_km(o, 60.0, 0.0).unwrap();
        let e = offset_km(o, 0.0, 200.0).unwrap();
        StationIndex::new(vec![
            station(1, o.lat(), o.lon(), "P1"),
            station(2, n.lat(), n.lon(), "P1"),
            station(3, e.lat(), e.lon(), "P2"),
        ])
        .unwrap()
    }

    #[test]
    fn exact_hit_is_one() {
        let idx = spaced_index();
        let r = results(&[("u", &[1, 2, 3])]);
        assert_eq!(
            precision_at_k(&r, &truth(&[("u", 1)]), &idx, 1, 0.5).unwrap(),
            1.0
        );
    }

    #[test]
    fn half_correct() {
        let idx = spaced_index();
        let r = results(&[("a", &[1, 2, 3]), ("b", &[1, 2, 3])]);
        let t = truth(&[("a", 1), ("b", 3)]);
        assert_eq!(precision_at_k(&r, &t, &idx, 1, 10.0).unwrap(), 0.5);
    }

    #[test]
    fn correct_distance_threshold() {
        let idx = spaced_index();
        let dist = idx.distance_km(StationId(1), StationId(2)).unwrap();
        assert!((dist - 60.0).abs() < 0.1);
        let r = results(&[("u", &[2, 1, 3])]);
        let t = truth(&[("u", 1)]);
        assert_eq!(precision_at_k(&r, &t, &idx, 1, 70.0).unwrap(), 1.0);
        assert_eq!(precision_at_k(&r, &t, &idx, 1, 50.0).unwrap(), 0.0);
        // strict inequality at exactly the distance
        assert_eq!(precision_at_k(&r, &t, &idx, 1, dist).unwrap(), 0.0);
        assert_eq!(precision_at_k(&r, &t, &idx, 2, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn missing_truth_and_bad_params() {
        let idx = spaced_index();
        let r = results(&[("ghost", &[1])]);
        assert!(matches!(
            precision_at_k(&r, &truth(&[]), &idx, 1, 10.0),
            Err(Error::MissingTruth(_))
        ));
        let r = results(&[("u", &[1])]);
        let t = truth(&[("u", 1)]);
        assert!(precision_at_k(&r, &t, &idx, 0, 10.0).is_err());
        assert!(precision_at_k(&r, &t, &idx, 1, 0.0).is_err());
    }

    #[test]
    fn prefecture_single_group() {
        let idx = spaced_index();
        let r = results(&[("a", &[1]), ("b", &[2])]);
        let t = truth(&[("a", 1), ("b", 2)]);
        for mode in [Denominator::AllUsers, Denominator::PerGroup] {
            let p = precision_by_prefecture(&r, &t, &idx, 1, 10.0, mode).unwrap();
            assert_eq!(p.len(), 1);
            assert_eq!(p["P1"].precision, 1.0);
        }
    }

    #[test]
    fn prefecture_denominators() {
        let idx = spaced_index();
        let r = results(&[("a", &[1]), ("b", &[1])]);
        let t = truth(&[("a", 1), ("b", 3)]);
        let all = precision_by_prefecture(&r, &t, &idx, 1, 10.0, Denominator::AllUsers).unwrap();
        assert_eq!((all["P1"].precision, all["P2"].precision), (0.5, 0.0));
        let group = precision_by_prefecture(&r, &t, &idx, 1, 10.0, Denominator::PerGroup).unwrap();
        assert_eq!((group["P1"].precision, group["P2"].precision), (1.0, 0.0));
        for (p, s) in &group {
            assert!(s.precision >= all[p].precision);
        }
    }

    #[test]
    fn prefecture_hit_requires_same_prefecture() {
        // a station of another prefecture 5 km away is not a hit
        let o = GeoPoint::new(35.0, 135.0).unwrap();
        let near = offset_km(o, 5.0, 0.0).unwrap();
        let idx = StationIndex::new(vec![
            Station {
                id: StationId(1),
                name: "a".into(),
                location: o,
                prefecture: "P1".into(),
            },
            Station {
                id: StationId(2),
                name: "b".into(),
                location: near,
                prefecture: "P2".into(),
            },
        ])
        .unwrap();
        assert!(haversine_km(o, near) < 10.0);
        let r = results(&[("u", &[2, 1])]);
        let t = truth(&[("u", 1)]);
        assert_eq!(precision_at_k(&r, &t, &idx, 1, 10.0).unwrap(), 1.0);
        let p = precision_by_prefecture(&r, &t, &idx, 1, 10.0, Denominator::AllUsers).unwrap();
        assert_eq!(p["P1"].precision, 0.0);
    }

    #[test]
    fn macro_average_examples() {
        let m = |v: &[(&str, f64)]| -> BTreeMap<String, f64> {
            v.iter().map(|(k, x)| (k.to_string(), *x)).collect()
        };
        assert_eq!(macro_average(&m(&[("P1", 1.0), ("P2", 0.0)])).unwrap(), 0.5);
        assert_eq!(macro_average(&m(&[("P1", 0.3)])).unwrap(), 0.3);
        assert!(
            (macro_average(&m(&[("P1", 0.2), ("P2", 0.4), ("P3", 0.6)])).unwrap() - 0.4).abs()
                < 1e-15
        );
        assert!(macro_average(&m(&[])).is_err());
    }

    #[test]
    fn sweep_parsing() {
        let d = parse_sweep("10:160:10").unwrap();
        assert_eq!(d.len(), 16);
        assert_eq!(d[0], 10.0);
        assert_eq!(d[15], 160.0);
        assert!(parse_sweep("10:5:1").is_err());
        assert!(parse_sweep("10:20").is_err());
        assert!(parse_sweep("a:b:c").is_err());
    }

    #[test]
    fn report_csv_shapes() {
        let idx = spaced_index();
        let r = results(&[("a", &[1, 2, 3]), ("b", &[2, 3, 1])]);
        let t = truth(&[("a", 1), ("b", 3)]);
        let params = EvalParams {
            k_values: vec![1],
            ..Default::default()
        };
        let report = evaluate(&r, &t, &idx, &params).unwrap();
        let csv = report.sweep_csv();
        assert_eq!(csv.lines().count(), 17);
        assert_eq!(csv.lines().nth(1).unwrap(), "1,10,0.5");
        assert_eq!(
            report.prefecture_csv(),
            "prefecture,users,precision\nP1,1,0.5\nP2,1,0\n"
        );
        assert_eq!(report.by_prefecture.macro_average, 0.25);
    }
}
