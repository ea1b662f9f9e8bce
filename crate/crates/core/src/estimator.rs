//! Home-station estimation by matching predicted rain labels against each
//! station's observed rain history.

use std::cmp::Ordering;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::ObservationTable;
use crate::error::{Error, Result};
use crate::features::{vectorize, Vocabulary};
use crate::geo::{StationId, StationIndex};
use crate::pipeline::LabeledMessage;
use crate::svm::{predict, LinearModel};

/// Predicted rain flag per message, in message order.
pub type WeatherSeries = Vec<(NaiveDate, bool)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Any missing observation is an error.
    #[default]
    Strict,
    /// Skip entries without an observation.
    AllowMissing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AreaScore {
    pub station_id: StationId,
    pub disagreements: u32,
    pub compared: u32,
}

/// Every candidate station, best first.
pub type RankedAreas = Vec<AreaScore>;

/// Predicts rain for each message. The stored labels are not consulted.
pub fn predict_weather_series(
    messages: &[LabeledMessage],
    model: &LinearModel,
    vocab: &Vocabulary,
) -> Result<WeatherSeries> {
    messages
        .iter()
        .map(|m| Ok((m.date, predict(model, &vectorize(&m.tokens, vocab))?)))
        .collect()
}

/// Number of entries whose predicted flag differs from the station's
/// observation, and the number of entries compared.
pub fn disagreement(
    series: &[(NaiveDate, bool)],
    observations: &ObservationTable,
    station: StationId,
    policy: MissingPolicy,
) -> Result<(u32, u32)> {
    let mut disagreements = 0;
    let mut compared = 0;
    for &(date, predicted) in series {
        match observations.get(station, date) {
            Some(observed) => {
                compared += 1;
                disagreements += u32::from(observed != predicted);
            }
            None if policy == MissingPolicy::Strict => {
                return Err(Error::MissingObservation { station, date });
            }
            None => {}
        }
    }
    Ok((disagreements, compared))
}

fn compare_scores(a: &AreaScore, b: &AreaScore, policy: MissingPolicy) -> Ordering {
    let primary = match policy {
        MissingPolicy::Strict => a.disagreements.cmp(&b.disagreements),
        // rates compared exactly by cross-multiplication; nothing compared sorts last
        MissingPolicy::AllowMissing => match (a.compared, b.compared) {
            (0, 0) => Ordering::Equal,
            (0, _) => Ordering::Greater,
            (_, 0) => Ordering::Less,
            (ca, cb) => (u64::from(a.disagreements) * u64::from(cb))
                .cmp(&(u64::from(b.disagreements) * u64::from(ca))),
        },
    };
    primary.then(a.station_id.cmp(&b.station_id))
}

/// Ranks all stations for an already-predicted series.
pub fn rank_series(
    series: &[(NaiveDate, bool)],
    observations: &ObservationTable,
    index: &StationIndex,
    policy: MissingPolicy,
) -> Result<RankedAreas> {
    let mut ranked = index
        .ids()
        .map(|station_id| {
            let (disagreements, compared) = disagreement(series, observations, station_id, policy)?;
            Ok(AreaScore {
                station_id,
                disagreements,
                compared,
            })
        })
        .collect::<Result<RankedAreas>>()?;
    ranked.sort_by(|a, b| compare_scores(a, b, policy));
    Ok(ranked)
}

pub fn rank_areas(
    messages: &[LabeledMessage],
    model: &LinearModel,
    vocab: &Vocabulary,
    observations: &ObservationTable,
    index: &StationIndex,
    policy: MissingPolicy,
) -> Result<RankedAreas> {
    let series = predict_weather_series(messages, model, vocab)?;
    rank_series(&series, observations, index, policy)
}

pub fn estimate_home(
    messages: &[LabeledMessage],
    model: &LinearModel,
    vocab: &Vocabulary,
    observations: &ObservationTable,
    index: &StationIndex,
    policy: MissingPolicy,
) -> Result<StationId> {
    let ranked = rank_areas(messages, model, vocab, observations, index, policy)?;
    Ok(ranked[0].station_id)
}
