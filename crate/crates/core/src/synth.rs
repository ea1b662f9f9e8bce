//! Synthetic worlds: stations on a jittered grid, front-based rain with a
//! tunable correlation length, and users whose messages carry rain or dry
//! words that track the weather at the station they post from.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::{
    local_midnight, messages_to_jsonl, stations_to_csv, write_atomic, ObservationTable, RawMessage,
    UtcOffset,
};
use crate::error::{Error, Result};
use crate::geo::{
    haversine_km, offset_km, GeoPoint, Station, StationId, StationIndex, EARTH_RADIUS_KM,
};
use crate::pipeline::{truth_to_csv, HomeTruth};

pub const PRNG_NAME: &str = "ChaCha8Rng (rand_chacha 0.9, seed_from_u64)";
pub const WORLD_FORMAT: &str = "wxhome-world 1";

const MAX_WEATHER_ATTEMPTS: u32 = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_stations: usize,
    /// South-west corner of the station grid.
    pub origin_lat: f64,
    pub origin_lon: f64,
    /// Side of the square grid area, in degrees.
    pub extent_deg: f64,
    pub n_days: usize,
    pub start_date: NaiveDate,
    pub p_rain: f64,
    /// Front radius; same-day rain correlation fades over this distance.
    pub correlation_km: f64,
    /// Independent per-station-day rain probability added on top of fronts.
    pub station_noise: f64,
    pub n_users: usize,
    pub messages_per_user: usize,
    /// Probability that a message carries a weather word.
    pub fidelity: f64,
    /// Probability that a weather word has the wrong polarity.
    pub label_noise: f64,
    /// Fraction of messages posted from a random non-home station.
    pub away_rate: f64,
    pub rain_words: usize,
    pub dry_words: usize,
    pub neutral_words: usize,
    pub neutral_min: usize,
    pub neutral_max: usize,
    /// Grid cells per prefecture side (prefectures are square blocks of cells).
    pub prefecture_block: usize,
    pub coord_jitter_km: f64,
    pub utc_offset: UtcOffset,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_stations: 20,
            origin_lat: 35.0,
            origin_lon: 135.0,
            extent_deg: 2.0,
            n_days: 120,
            start_date: NaiveDate::from_ymd_opt(2016, 1, 1).unwrap(),
            p_rain: 0.3,
            correlation_km: 5.0,
            station_noise: 0.0,
            n_users: 50,
            messages_per_user: 100,
            fidelity: 0.95,
            label_noise: 0.05,
            away_rate: 0.0,
            rain_words: 25,
            dry_words: 9,
            neutral_words: 200,
            neutral_min: 2,
            neutral_max: 5,
            prefecture_block: 2,
            coord_jitter_km: 1.0,
            utc_offset: UtcOffset::JST,
        }
    }
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: SynthConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_stations < 2 {
            return fail("n_stations must be at least 2");
        }
        if !(self.p_rain > 0.0 && self.p_rain < 1.0) {
            return fail("p_rain must be in (0, 1)");
        }
        if !(self.station_noise >= 0.0 && self.station_noise < self.p_rain) {
            return fail("station_noise must be in [0, p_rain)");
        }
        if !(self.fidelity > 0.5 && self.fidelity <= 1.0) {
            return fail("fidelity must be in (0.5, 1]");
        }
        if !(self.label_noise >= 0.0 && self.label_noise < 0.5) {
            return fail("label_noise must be in [0, 0.5)");
        }
        if !(0.0..=0.1).contains(&self.away_rate) {
            return fail("away_rate must be in [0, 0.1]");
        }
        if self.rain_words == 0 || self.dry_words == 0 {
            return fail("rain_words and dry_words must be positive");
        }
        if self.neutral_min > self.neutral_max || (self.neutral_max > 0 && self.neutral_words == 0)
        {
            return fail("neutral word settings are inconsistent");
        }
        if self.n_days == 0 || self.n_users == 0 || self.messages_per_user == 0 {
            return fail("n_days, n_users and messages_per_user must be positive");
        }
        if !(self.extent_deg > 0.0 && self.correlation_km > 0.0 && self.coord_jitter_km >= 0.0) {
            return fail("extent_deg and correlation_km must be positive");
        }
        if self.prefecture_block == 0 {
            return fail("prefecture_block must be positive");
        }
        GeoPoint::new(self.origin_lat, self.origin_lon)?;
        GeoPoint::new(
            self.origin_lat + self.extent_deg,
            self.origin_lon + self.extent_deg,
        )?;
        Ok(())
    }

    fn date(&self, day: usize) -> NaiveDate {
        self.start_date + Days::new(day as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldMeta {
    pub format: String,
    pub seed: u64,
    pub prng: String,
    pub weather_attempts: u32,
    pub config: SynthConfig,
}

#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub stations: StationIndex,
    pub observations: ObservationTable,
    pub messages: Vec<RawMessage>,
    pub truth: HomeTruth,
    pub rain_words: BTreeSet<String>,
    pub dry_words: BTreeSet<String>,
    pub meta: WorldMeta,
}

pub const STATIONS_FILE: &str = "stations.csv";
pub const OBSERVATIONS_FILE: &str = "observations.csv";
pub const MESSAGES_FILE: &str = "messages.jsonl";
pub const TRUTH_FILE: &str = "truth.csv";
pub const CURATED_RAIN_FILE: &str = "curated_rain.txt";
pub const CURATED_NORAIN_FILE: &str = "curated_norain.txt";
pub const META_FILE: &str = "world.json";

impl SynthWorld {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let list =
            |words: &BTreeSet<String>| words.iter().map(|w| format!("{w}\n")).collect::<String>();
        write_atomic(&dir.join(STATIONS_FILE), &stations_to_csv(&self.stations)?)?;
        write_atomic(&dir.join(OBSERVATIONS_FILE), &self.observations.to_csv())?;
        write_atomic(
            &dir.join(MESSAGES_FILE),
            &messages_to_jsonl(&self.messages)?,
        )?;
        write_atomic(&dir.join(TRUTH_FILE), &truth_to_csv(&self.truth))?;
        write_atomic(
            &dir.join(CURATED_RAIN_FILE),
            list(&self.rain_words).as_bytes(),
        )?;
        write_atomic(
            &dir.join(CURATED_NORAIN_FILE),
            list(&self.dry_words).as_bytes(),
        )?;
        let mut meta = serde_json::to_vec_pretty(&self.meta)?;
        meta.push(b'\n');
        write_atomic(&dir.join(META_FILE), &meta)
    }
}

fn place_stations(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<(StationIndex, f64)> {
    let cols = (config.n_stations as f64).sqrt().ceil() as usize;
    let rows = config.n_stations.div_ceil(cols);
    let step = |cells: usize| config.extent_deg / (cells.max(2) - 1) as f64;
    let (dlat, dlon) = (step(rows), step(cols));
    let mut stations = Vec::with_capacity(config.n_stations);
    for i in 0..config.n_stations {
        let (r, c) = (i / cols, i % cols);
        let lat = config.origin_lat + r as f64 * dlat + rng.random_range(-0.1..=0.1) * dlat;
        let lon = config.origin_lon + c as f64 * dlon + rng.random_range(-0.1..=0.1) * dlon;
        let block = config.prefecture_block;
        stations.push(Station {
            id: StationId(i as u32 + 1),
            name: format!("S{:03}", i + 1),
            location: GeoPoint::new(lat, lon)?,
            prefecture: format!("P{}-{}", r / block, c / block),
        });
    }
    let index = StationIndex::new(stations)?;
    let min_spacing = index
        .stations()
        .iter()
        .enumerate()
        .flat_map(|(i, a)| {
            index.stations()[i + 1..]
                .iter()
                .map(move |b| haversine_km(a.location, b.location))
        })
        .fold(f64::INFINITY, f64::min);
    Ok((index, min_spacing))
}

/// Largest pairwise station distance.
pub fn grid_diameter_km(index: &StationIndex) -> f64 {
    let s = index.stations();
    s.iter()
        .flat_map(|a| s.iter().map(move |b| haversine_km(a.location, b.location)))
        .fold(0.0, f64::max)
}

struct FrontField {
    lat_range: (f64, f64),
    lon_range: (f64, f64),
    fronts_per_day: f64,
}

impl FrontField {
    /// Sizes the front process so a station's chance of being inside at
    /// least one front, combined with the station noise, is about `p_rain`.
    fn new(config: &SynthConfig, index: &StationIndex) -> Self {
        let lats = index.stations().iter().map(|s| s.location.lat());
        let lons = index.stations().iter().map(|s| s.location.lon());
        let (lat_lo, lat_hi) = lats.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
            (l.min(v), h.max(v))
        });
        let (lon_lo, lon_hi) = lons.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
            (l.min(v), h.max(v))
        });
        let radius = config.correlation_km;
        let pad_km = radius.min(grid_diameter_km(index));
        let km_per_deg = EARTH_RADIUS_KM.to_radians();
        let mid_lat = ((lat_lo + lat_hi) / 2.0).to_radians();
        let pad_lat = pad_km / km_per_deg;
        let pad_lon = pad_km / (km_per_deg * mid_lat.cos());
        let lat_range = ((lat_lo - pad_lat).max(-90.0), (lat_hi + pad_lat).min(90.0));
        let lon_range = (
            (lon_lo - pad_lon).max(-180.0),
            (lon_hi + pad_lon).min(180.0),
        );
        let area_km2 = (lat_range.1 - lat_range.0)
            * km_per_deg
            * (lon_range.1 - lon_range.0)
            * km_per_deg
            * mid_lat.cos();
        let coverage = (PI * radius * radius / area_km2).min(1.0);
        let dry_from_fronts = (1.0 - config.p_rain) / (1.0 - config.station_noise);
        Self {
            lat_range,
            lon_range,
            fronts_per_day: -dry_from_fronts.ln() / coverage,
        }
    }

    fn day(&self, config: &SynthConfig, index: &StationIndex, rng: &mut ChaCha8Rng) -> Vec<bool> {
        let count = if self.fronts_per_day > 0.0 {
            Poisson::new(self.fronts_per_day)
                .expect("positive rate")
                .sample(rng) as usize
        } else {
            0
        };
        let centers: Vec<GeoPoint> = (0..count)
            .map(|_| {
                let lat = rng.random_range(self.lat_range.0..=self.lat_range.1);
                let lon = rng.random_range(self.lon_range.0..=self.lon_range.1);
                GeoPoint::new(lat, lon).expect("clamped to valid range")
            })
            .collect();
        index
            .stations()
            .iter()
            .map(|s| {
                let in_front = centers
                    .iter()
                    .any(|&c| haversine_km(c, s.location) <= config.correlation_km);
                let noise = rng.random_bool(config.station_noise);
                in_front || noise
            })
            .collect()
    }
}

fn histories_identifiable(rain: &[Vec<bool>], n_stations: usize) -> bool {
    let days = rain.len();
    (0..n_stations).all(|a| {
        (a + 1..n_stations).all(|b| {
            let differing = rain.iter().filter(|day| day[a] != day[b]).count();
            differing * 10 >= days
        })
    })
}

pub fn generate(config: &SynthConfig, seed: u64) -> Result<SynthWorld> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (stations, min_spacing) = place_stations(config, &mut rng)?;

    let field = FrontField::new(config, &stations);
    let must_separate = config.n_days >= 100 && config.correlation_km < min_spacing / 2.0;
    let mut attempts = 0;
    let rain: Vec<Vec<bool>> = loop {
        attempts += 1;
        let rain: Vec<Vec<bool>> = (0..config.n_days)
            .map(|_| field.day(config, &stations, &mut rng))
            .collect();
        if !must_separate || histories_identifiable(&rain, stations.len()) {
            break rain;
        }
        if attempts >= MAX_WEATHER_ATTEMPTS {
            return Err(Error::Config(format!(
                "no identifiable weather after {attempts} attempts"
            )));
        }
    };
    let mut observations = ObservationTable::new();
    for (day, flags) in rain.iter().enumerate() {
        for (station, &rained) in stations.ids().zip(flags) {
            observations.insert(station, config.date(day), rained)?;
        }
    }

    let rain_words: Vec<String> = (1..=config.rain_words)
        .map(|i| format!("rain-{i}"))
        .collect();
    let dry_words: Vec<String> = (1..=config.dry_words).map(|i| format!("dry-{i}")).collect();
    let neutral: Vec<String> = (1..=config.neutral_words)
        .map(|i| format!("neutral-{i}"))
        .collect();
    let ids: Vec<StationId> = stations.ids().collect();

    let width = config.n_users.to_string().len();
    let mut truth = HomeTruth::new();
    let mut messages = Vec::with_capacity(config.n_users * config.messages_per_user);
    for u in 0..config.n_users {
        let user_id = format!("user{:0width$}", u + 1);
        let home_slot = rng.random_range(0..ids.len());
        truth.insert(user_id.clone(), ids[home_slot]);
        for _ in 0..config.messages_per_user {
            let day = rng.random_range(0..config.n_days);
            let slot = if rng.random_bool(config.away_rate) {
                let other = rng.random_range(0..ids.len() - 1);
                if other >= home_slot {
                    other + 1
                } else {
                    other
                }
            } else {
                home_slot
            };
            let rained = rain[day][slot];
            let n_neutral = rng.random_range(config.neutral_min..=config.neutral_max);
            let mut tokens: Vec<String> = (0..n_neutral)
                .map(|_| neutral.choose(&mut rng).expect("non-empty").clone())
                .collect();
            if rng.random_bool(config.fidelity) {
                let rainy_word = rained != rng.random_bool(config.label_noise);
                let pool = if rainy_word { &rain_words } else { &dry_words };
                let word = pool.choose(&mut rng).expect("non-empty").clone();
                let at = rng.random_range(0..=tokens.len());
                tokens.insert(at, word);
            }
            let home = stations.station(ids[slot])?.location;
            let j = config.coord_jitter_km;
            let coords = if j > 0.0 {
                offset_km(home, rng.random_range(-j..=j), rng.random_range(-j..=j))?
            } else {
                home
            };
            let timestamp =
                local_midnight(config.date(day), config.utc_offset) + rng.random_range(0..86_400);
            messages.push(RawMessage {
                user_id: user_id.clone(),
                timestamp,
                text: tokens.join(" "),
                coords: Some(coords),
                source: "synth".into(),
                tokens: None,
            });
        }
    }

    Ok(SynthWorld {
        stations,
        observations,
        messages,
        truth,
        rain_words: rain_words.into_iter().collect(),
        dry_words: dry_words.into_iter().collect(),
        meta: WorldMeta {
            format: WORLD_FORMAT.into(),
            seed,
            prng: PRNG_NAME.into(),
            weather_attempts: attempts,
            config: config.clone(),
        },
    })
}
