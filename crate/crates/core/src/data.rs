//! Loading stations, rain observations and raw messages.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{GeoPoint, Station, StationId, StationIndex};

/// Offset from UTC in minutes, limited to +-18 hours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "i32", into = "i32")]
pub struct UtcOffset(i32);

impl UtcOffset {
    /// Japan Standard Time, the default day boundary for observations.
    pub const JST: UtcOffset = UtcOffset(540);
    pub const UTC: UtcOffset = UtcOffset(0);

    pub fn from_minutes(minutes: i32) -> Result<Self> {
        if minutes.abs() <= 18 * 60 {
            Ok(Self(minutes))
        } else {
            Err(Error::InvalidArgument(format!(
                "UTC offset {minutes} min is outside +-1080"
            )))
        }
    }

    pub fn minutes(self) -> i32 {
        self.0
    }
}

impl Default for UtcOffset {
    fn default() -> Self {
        Self::JST
    }
}

impl TryFrom<i32> for UtcOffset {
    type Error = Error;
    fn try_from(m: i32) -> Result<Self> {
        Self::from_minutes(m)
    }
}

impl From<UtcOffset> for i32 {
    fn from(o: UtcOffset) -> i32 {
        o.0
    }
}

const EPOCH: NaiveDate = match NaiveDate::from_ymd_opt(1970, 1, 1) {
    Some(d) => d,
    None => panic!("epoch"),
};

/// Calendar date of a UTC epoch timestamp as seen at `offset`.
pub fn local_date(timestamp: i64, offset: UtcOffset) -> NaiveDate {
    let days = (timestamp + i64::from(offset.0) * 60).div_euclid(86_400);
    if days >= 0 {
        EPOCH + Days::new(days as u64)
    } else {
        EPOCH - Days::new(days.unsigned_abs())
    }
}

/// Epoch seconds of local midnight starting `date` at `offset`.
pub fn local_midnight(date: NaiveDate, offset: UtcOffset) -> i64 {
    let days = date.signed_duration_since(EPOCH).num_days();
    days * 86_400 - i64::from(offset.0) * 60
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_line(err: &csv::Error) -> u64 {
    err.position().map_or(0, |p| p.line())
}

/// Deserialised rows paired with their 1-based line numbers.
fn csv_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<(u64, T)>> {
    let mut reader = csv_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, csv_line(&e), e.to_string()))?
        .clone();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(path, csv_line(&e), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .deserialize(Some(&headers))
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
        rows.push((line, row));
    }
    Ok(rows)
}

#[derive(Debug, Deserialize, Serialize)]
struct StationRow {
    id: u32,
    name: String,
    lat: f64,
    lon: f64,
    prefecture: String,
}

pub fn load_stations(path: impl AsRef<Path>) -> Result<StationIndex> {
    let path = path.as_ref();
    let mut stations: BTreeMap<StationId, Station> = BTreeMap::new();
    for (line, row) in csv_rows::<StationRow>(path)? {
        let id = StationId(row.id);
        let location =
            GeoPoint::new(row.lat, row.lon).map_err(|e| Error::parse(path, line, e.to_string()))?;
        if row.prefecture.is_empty() {
            return Err(Error::parse(path, line, "empty prefecture"));
        }
        if stations.contains_key(&id) {
            return Err(Error::parse(
                path,
                line,
                format!("duplicate station id {id}"),
            ));
        }
        stations.insert(
            id,
            Station {
                id,
                name: row.name,
                location,
                prefecture: row.prefecture,
            },
        );
    }
    StationIndex::new(stations.into_values().collect())
}

pub fn stations_to_csv(index: &StationIndex) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for s in index.stations() {
        writer.serialize(StationRow {
            id: s.id.0,
            name: s.name.clone(),
            lat: s.location.lat(),
            lon: s.location.lon(),
            prefecture: s.prefecture.clone(),
        })?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::io("<memory>", e.into_error()))
}

/// Daily rain flags per station. `true` means it rained that day.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ObservationTable {
    cells: BTreeMap<(StationId, NaiveDate), bool>,
}

impl ObservationTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, station: StationId, date: NaiveDate, rained: bool) -> Result<()> {
        match self.cells.entry((station, date)) {
            std::collections::btree_map::Entry::Occupied(_) => {
                Err(Error::DuplicateObservation { station, date })
            }
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(rained);
                Ok(())
            }
        }
    }

    pub fn get(&self, station: StationId, date: NaiveDate) -> Option<bool> {
        self.cells.get(&(station, date)).copied()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Entries in (station, date) order.
    pub fn iter(&self) -> impl Iterator<Item = (StationId, NaiveDate, bool)> + '_ {
        self.cells.iter().map(|(&(s, d), &r)| (s, d, r))
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut out = String::from("station_id,date,rained\n");
        for (s, d, r) in self.iter() {
            out.push_str(&format!("{s},{d},{}\n", u8::from(r)));
        }
        out.into_bytes()
    }
}

#[derive(Debug, Deserialize)]
struct ObservationRow {
    station_id: u32,
    date: String,
    rained: String,
}

pub fn load_observations(path: impl AsRef<Path>, index: &StationIndex) -> Result<ObservationTable> {
    let path = path.as_ref();
    let mut table = ObservationTable::new();
    for (line, row) in csv_rows::<ObservationRow>(path)? {
        let station = StationId(row.station_id);
        if !index.contains(station) {
            return Err(Error::parse(
                path,
                line,
                format!("unknown station id {station}"),
            ));
        }
        let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d")
            .map_err(|e| Error::parse(path, line, format!("bad date {:?}: {e}", row.date)))?;
        let rained = match row.rained.as_str() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::parse(
                    path,
                    line,
                    format!("rained must be 0 or 1, got {other:?}"),
                ))
            }
        };
        table
            .insert(station, date, rained)
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawMessage {
    pub user_id: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub text: String,
    pub coords: Option<GeoPoint>,
    pub source: String,
    pub tokens: Option<Vec<String>>,
}

/// One line of the messages JSONL file.
#[derive(Debug, Serialize, Deserialize)]
struct MessageRecord {
    user_id: String,
    ts: i64,
    #[serde(default)]
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lon: Option<f64>,
    #[serde(default)]
    source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<String>>,
}

impl TryFrom<MessageRecord> for RawMessage {
    type Error = String;

    fn try_from(r: MessageRecord) -> std::result::Result<Self, String> {
        if r.ts < 0 {
            return Err(format!("negative timestamp {}", r.ts));
        }
        let coords = match (r.lat, r.lon) {
            (Some(lat), Some(lon)) => Some(GeoPoint::new(lat, lon).map_err(|e| e.to_string())?),
            (None, None) => None,
            _ => return Err("lat and lon must be given together".into()),
        };
        if r.text.is_empty() && r.tokens.is_none() {
            return Err("empty text without tokens".into());
        }
        Ok(RawMessage {
            user_id: r.user_id,
            timestamp: r.ts,
            text: r.text,
            coords,
            source: r.source,
            tokens: r.tokens,
        })
    }
}

impl From<&RawMessage> for MessageRecord {
    fn from(m: &RawMessage) -> Self {
        MessageRecord {
            user_id: m.user_id.clone(),
            ts: m.timestamp,
            text: m.text.clone(),
            lat: m.coords.map(|c| c.lat()),
            lon: m.coords.map(|c| c.lon()),
            source: m.source.clone(),
            tokens: m.tokens.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// The first malformed line is an error.
    #[default]
    Strict,
    /// Malformed lines are skipped and counted.
    Lenient,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedMessages {
    pub messages: Vec<RawMessage>,
    pub skipped: usize,
}

pub fn load_messages(path: impl AsRef<Path>, mode: ParseMode) -> Result<LoadedMessages> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut loaded = LoadedMessages::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<MessageRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(RawMessage::try_from);
        match (parsed, mode) {
            (Ok(m), _) => loaded.messages.push(m),
            (Err(msg), ParseMode::Strict) => return Err(Error::parse(path, i as u64 + 1, msg)),
            (Err(_), ParseMode::Lenient) => loaded.skipped += 1,
        }
    }
    Ok(loaded)
}

pub fn messages_to_jsonl(messages: &[RawMessage]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for m in messages {
        serde_json::to_writer(&mut out, &MessageRecord::from(m))?;
        out.push(b'\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::File::create(&p)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        p
    }

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn local_date_examples() {
        assert_eq!(local_date(0, UtcOffset::UTC), date("1970-01-01"));
        let t = 20 * 3600;
        assert_eq!(local_date(t, UtcOffset::JST), date("1970-01-02"));
        let t = 86_400 + 2 * 3600;
        assert_eq!(
            local_date(t, UtcOffset::from_minutes(-540).unwrap()),
            date("1970-01-01")
        );
        assert!(UtcOffset::from_minutes(18 * 60 + 1).is_err());
    }

    #[test]
    fn local_midnight_inverts_local_date() {
        let d = date("2016-05-01");
        let t = local_midnight(d, UtcOffset::JST);
        assert_eq!(local_date(t, UtcOffset::JST), d);
        assert_eq!(local_date(t - 1, UtcOffset::JST), date("2016-04-30"));
    }

    #[test]
    fn stations_load_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "s.csv",
            "id,name,lat,lon,prefecture\n9,B,35.0,135.0,P2\n2,A,34.0,134.0,P1\n",
        );
        let idx = load_stations(&p).unwrap();
        assert_eq!(idx.len(), 2);
        assert_eq!(
            idx.ids().collect::<Vec<_>>(),
            vec![StationId(2), StationId(9)]
        );
    }

    #[test]
    fn stations_reject_duplicates_and_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "dup.csv",
            "id,name,lat,lon,prefecture\n5,A,35.0,135.0,P\n5,B,34.0,134.0,P\n",
        );
        let err = load_stations(&p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let p = write(
            &dir,
            "lat.csv",
            "id,name,lat,lon,prefecture\n1,A,95.0,135.0,P\n",
        );
        assert!(matches!(
            load_stations(&p),
            Err(Error::Parse { line: 2, .. })
        ));
        let p = write(
            &dir,
            "bad.csv",
            "id,name,lat,lon,prefecture\n1,A,x,135.0,P\n",
        );
        assert!(matches!(load_stations(&p), Err(Error::Parse { .. })));
    }

    fn two_stations() -> StationIndex {
        StationIndex::new(vec![
            crate::geo::tests::station(3, 35.0, 135.0, "P"),
            crate::geo::tests::station(4, 36.0, 135.0, "P"),
        ])
        .unwrap()
    }

    #[test]
    fn observations_load_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let idx = two_stations();
        let p = write(
            &dir,
            "o.csv",
            "station_id,date,rained\n3,2016-05-01,1\n4,2016-05-01,0\n",
        );
        let t = load_observations(&p, &idx).unwrap();
        assert_eq!(t.get(StationId(3), date("2016-05-01")), Some(true));
        assert_eq!(t.get(StationId(4), date("2016-05-01")), Some(false));
        assert_eq!(t.len(), 2);

        let p = write(
            &dir,
            "d.csv",
            "station_id,date,rained\n3,2016-05-01,1\n3,2016-05-01,0\n",
        );
        assert!(load_observations(&p, &idx).is_err());
        let p = write(&dir, "b.csv", "station_id,date,rained\n3,2016-05-01,2\n");
        assert!(load_observations(&p, &idx).is_err());
        let p = write(&dir, "u.csv", "station_id,date,rained\n7,2016-05-01,1\n");
        assert!(load_observations(&p, &idx).is_err());
    }

    #[test]
    fn messages_strict_and_lenient() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "m.jsonl",
            concat!(
                r#"{"user_id":"a","ts":10,"text":"rain","lat":35.0,"lon":135.0,"source":"web"}"#,
                "\n",
                r#"{"user_id":"b","ts":11,"text":"sun","source":"web","tokens":["sun"]}"#,
                "\n",
                r#"{"user_id":"c","ts":12,"te"#,
                "\n",
            ),
        );
        assert!(matches!(
            load_messages(&p, ParseMode::Strict),
            Err(Error::Parse { line: 3, .. })
        ));
        let loaded = load_messages(&p, ParseMode::Lenient).unwrap();
        assert_eq!(loaded.skipped, 1);
        assert_eq!(loaded.messages.len(), 2);
        assert!(loaded.messages[0].coords.is_some());
        assert!(loaded.messages[0].tokens.is_none());
        assert!(loaded.messages[1].coords.is_none());
        assert_eq!(
            loaded.messages[1].tokens.as_deref(),
            Some(&["sun".to_string()][..])
        );
    }

    #[test]
    fn messages_roundtrip_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let msgs = vec![RawMessage {
            user_id: "u".into(),
            timestamp: 1_462_000_000,
            text: "rain now".into(),
            coords: Some(GeoPoint::new(35.1, 135.2).unwrap()),
            source: "app".into(),
            tokens: None,
        }];
        let p = dir.path().join("m.jsonl");
        write_atomic(&p, &messages_to_jsonl(&msgs).unwrap()).unwrap();
        assert_eq!(load_messages(&p, ParseMode::Strict).unwrap().messages, msgs);
    }

    proptest! {
        #[test]
        fn observation_csv_roundtrip(rows in prop::collection::btree_map((3u32..5, 0u64..400), any::<bool>(), 0..60)) {
            let idx = two_stations();
            let mut table = ObservationTable::new();
            for (&(s, d), &r) in &rows {
                table.insert(StationId(s), date("2016-01-01") + Days::new(d), r).unwrap();
            }
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("o.csv");
            write_atomic(&p, &table.to_csv()).unwrap();
            prop_assert_eq!(load_observations(&p, &idx).unwrap(), table);
        }

        #[test]
        fn local_date_monotone(a in 0i64..4_000_000_000, b in 0i64..4_000_000_000, off in -1080i32..=1080) {
            let off = UtcOffset::from_minutes(off).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(local_date(lo, off) <= local_date(hi, off));
        }
    }
}
