//! Great-circle distances and station lookup.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius (IUGG), in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// A latitude/longitude pair in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let valid = lat.is_finite()
            && lon.is_finite()
            && (-90.0..=90.0).contains(&lat)
            && (-180.0..=180.0).contains(&lon);
        if valid {
            Ok(Self { lat, lon })
        } else {
            Err(Error::InvalidCoordinates { lat, lon })
        }
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Identifier of a station, which doubles as the area identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StationId(pub u32);

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Station {
    pub id: StationId,
    pub name: String,
    pub location: GeoPoint,
    pub prefecture: String,
}

/// The set of candidate areas, kept sorted by station id.
#[derive(Debug, Clone, PartialEq)]
pub struct StationIndex {
    stations: Vec<Station>,
}

impl StationIndex {
    /// Builds an index from stations in any order.
    pub fn new(mut stations: Vec<Station>) -> Result<Self> {
        if stations.is_empty() {
            return Err(Error::EmptyIndex);
        }
        stations.sort_by_key(|s| s.id);
        if let Some(pair) = stations.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::DuplicateStation(pair[0].id));
        }
        if let Some(s) = stations.iter().find(|s| s.prefecture.trim().is_empty()) {
            return Err(Error::InvalidArgument(format!(
                "station {} has an empty prefecture",
                s.id
            )));
        }
        Ok(Self { stations })
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn ids(&self) -> impl Iterator<Item = StationId> + '_ {
        self.stations.iter().map(|s| s.id)
    }

    pub fn get(&self, id: StationId) -> Option<&Station> {
        self.stations
            .binary_search_by_key(&id, |s| s.id)
            .ok()
            .map(|i| &self.stations[i])
    }

    pub fn station(&self, id: StationId) -> Result<&Station> {
        self.get(id).ok_or(Error::UnknownStation(id))
    }

    pub fn contains(&self, id: StationId) -> bool {
        self.get(id).is_some()
    }

    pub fn distance_km(&self, a: StationId, b: StationId) -> Result<f64> {
        Ok(haversine_km(
            self.station(a)?.location,
            self.station(b)?.location,
        ))
    }
}

pub fn haversine_km(p: GeoPoint, q: GeoPoint) -> f64 {
    if p == q {
        return 0.0;
    }
    let (lat1, lat2) = (p.lat.to_radians(), q.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (q.lon - p.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Nearest station strictly closer than `radius_km`, ties going to the lowest id.
pub fn nearest_station_within(
    p: GeoPoint,
    index: &StationIndex,
    radius_km: f64,
) -> Result<Option<StationId>> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if !(radius_km > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "radius must be positive, got {radius_km}"
        )));
    }
    // stations are sorted by id, so strict `<` keeps the lowest id on ties
    let mut best: Option<(StationId, f64)> = None;
    for station in index.stations() {
        let d = haversine_km(p, station.location);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((station.id, d));
        }
    }
    Ok(best.filter(|&(_, d)| d < radius_km).map(|(id, _)| id))
}

pub fn prefecture_of(id: StationId, index: &StationIndex) -> Result<&str> {
    index.station(id).map(|s| s.prefecture.as_str())
}

/// Moves `origin` by the given north/east offsets in kilometres using a local
/// equirectangular approximation. Only meant for short offsets.
pub fn offset_km(origin: GeoPoint, north_km: f64, east_km: f64) -> Result<GeoPoint> {
    let km_per_deg = EARTH_RADIUS_KM.to_radians();
    let lat = origin.lat + north_km / km_per_deg;
    let lon = origin.lon + east_km / (km_per_deg * origin.lat.to_radians().cos());
    GeoPoint::new(lat, lon)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn station(id: u32, lat: f64, lon: f64, pref: &str) -> Station {
        Station {
            id: StationId(id),
            name: format!("s{id}"),
            location: GeoPoint::new(lat, lon).unwrap(),
            prefecture: pref.to_string(),
        }
    }

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn identical_points_are_zero() {
        assert_eq!(haversine_km(pt(35.0, 135.0), pt(35.0, 135.0)), 0.0);
    }

    #[test]
    fn half_and_quarter_circumference() {
        let half = std::f64::consts::PI * EARTH_RADIUS_KM;
        assert!((haversine_km(pt(0.0, 0.0), pt(0.0, 180.0)) - half).abs() < 1e-6);
        assert!((haversine_km(pt(0.0, 0.0), pt(0.0, 180.0)) - 20015.1).abs() < 0.1);
        assert!((haversine_km(pt(0.0, 0.0), pt(0.0, 90.0)) - 10007.5).abs() < 0.1);
        assert!((haversine_km(pt(0.0, 0.0), pt(0.0, 90.0)) - half / 2.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_out_of_range_points() {
        assert!(GeoPoint::new(95.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, -180.5).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn nearest_at_station_itself() {
        let idx = StationIndex::new(vec![
            station(7, 35.0, 135.0, "P1"),
            station(8, 35.5, 135.0, "P1"),
        ])
        .unwrap();
        assert_eq!(
            nearest_station_within(pt(35.0, 135.0), &idx, 10.0).unwrap(),
            Some(StationId(7))
        );
    }

    #[test]
    fn nearest_outside_radius_is_absent() {
        let origin = pt(35.0, 135.0);
        let far = offset_km(origin, 12.0, 0.0).unwrap();
        assert!((haversine_km(origin, far) - 12.0).abs() < 0.01);
        let idx = StationIndex::new(vec![station(1, far.lat(), far.lon(), "P1")]).unwrap();
        assert_eq!(nearest_station_within(origin, &idx, 10.0).unwrap(), None);
    }

    #[test]
    fn nearest_picks_closer_of_two() {
        let origin = pt(35.0, 135.0);
        let a = offset_km(origin, 3.0, 0.0).unwrap();
        let b = offset_km(origin, 0.0, -8.0).unwrap();
        assert!(haversine_km(origin, a) < 10.0 && haversine_km(origin, b) < 10.0);
        assert!(haversine_km(origin, a) < haversine_km(origin, b));
        let idx = StationIndex::new(vec![
            station(2, b.lat(), b.lon(), "P"),
            station(9, a.lat(), a.lon(), "P"),
        ])
        .unwrap();
        assert_eq!(
            nearest_station_within(origin, &idx, 10.0).unwrap(),
            Some(StationId(9))
        );
    }

    #[test]
    fn nearest_tie_goes_to_lowest_id() {
        let idx = StationIndex::new(vec![
            station(5, 35.0, 135.01, "P"),
            station(3, 35.0, 134.99, "P"),
        ])
        .unwrap();
        assert_eq!(
            nearest_station_within(pt(35.0, 135.0), &idx, 10.0).unwrap(),
            Some(StationId(3))
        );
    }

    #[test]
    fn nearest_rejects_bad_radius() {
        let idx = StationIndex::new(vec![station(1, 0.0, 0.0, "P")]).unwrap();
        assert!(nearest_station_within(pt(0.0, 0.0), &idx, 0.0).is_err());
    }

    #[test]
    fn index_validation() {
        assert!(matches!(StationIndex::new(vec![]), Err(Error::EmptyIndex)));
        let dup = StationIndex::new(vec![station(1, 0.0, 0.0, "P"), station(1, 1.0, 1.0, "P")]);
        assert!(matches!(dup, Err(Error::DuplicateStation(StationId(1)))));
        assert!(StationIndex::new(vec![station(1, 0.0, 0.0, " ")]).is_err());
    }

    #[test]
    fn prefecture_lookup() {
        let idx = StationIndex::new(vec![
            station(3, 35.0, 135.0, "P1"),
            station(4, 36.0, 135.0, "P2"),
            station(6, 37.0, 135.0, "P2"),
        ])
        .unwrap();
        assert_eq!(prefecture_of(StationId(3), &idx).unwrap(), "P1");
        assert_eq!(prefecture_of(StationId(4), &idx).unwrap(), "P2");
        assert_eq!(prefecture_of(StationId(6), &idx).unwrap(), "P2");
        assert!(matches!(
            prefecture_of(StationId(999), &idx),
            Err(Error::UnknownStation(StationId(999)))
        ));
    }

    fn arb_point() -> impl Strategy<Value = GeoPoint> {
        (-90.0f64..=90.0, -180.0f64..=180.0).prop_map(|(a, b)| GeoPoint::new(a, b).unwrap())
    }

    proptest! {
        #[test]
        fn haversine_symmetric(p in arb_point(), q in arb_point()) {
            prop_assert_eq!(haversine_km(p, q), haversine_km(q, p));
            prop_assert!(haversine_km(p, q) >= 0.0);
            prop_assert_eq!(haversine_km(p, p), 0.0);
        }

        #[test]
        fn nearest_is_within_radius_and_order_free(
            coords in prop::collection::vec((34.0f64..36.0, 134.0f64..136.0), 1..12),
            p in (34.0f64..36.0, 134.0f64..136.0),
            radius in 1.0f64..150.0,
            rotate in 0usize..12,
        ) {
            let stations: Vec<Station> = coords
                .iter()
                .enumerate()
                .map(|(i, &(la, lo))| station(i as u32 * 3 + 1, la, lo, "P"))
                .collect();
            let mut rotated = stations.clone();
            let n = rotated.len();
            rotated.rotate_left(rotate % n);
            rotated.reverse();
            let a = StationIndex::new(stations).unwrap();
            let b = StationIndex::new(rotated).unwrap();
            let p = pt(p.0, p.1);
            let found = nearest_station_within(p, &a, radius).unwrap();
            prop_assert_eq!(found, nearest_station_within(p, &b, radius).unwrap());
            if let Some(id) = found {
                prop_assert!(haversine_km(p, a.station(id).unwrap().location) < radius);
            }
        }
    }
}
