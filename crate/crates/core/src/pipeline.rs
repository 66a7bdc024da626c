//! Decoded tracker messages become stored positions; tracks are read back in
//! server-time order and exported as CSV or GeoJSON.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::codec::{is_valid_latitude, is_valid_longitude, TrackerMessage};
use crate::ids::{DeviceId, MessageId, PositionId};
use crate::registry::Registry;
use crate::store::{ordered_i64, ordered_u64, Namespace, StoreError, StoreExt, StorePort, WriteBatch};

const NEXT_POSITION_KEY: &str = "next_position_id";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown device {0}")]
    UnknownDevice(DeviceId),
    #[error("range start {from} is after end {to}")]
    InvalidRange { from: DateTime<Utc>, to: DateTime<Utc> },
    #[error("coordinates ({0}, {1}) out of range")]
    InvalidCoordinates(f64, f64),
    #[error("bad cursor {0:?}")]
    BadCursor(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixQuality {
    Fresh,
    Stale,
    Salvaged,
}

impl FixQuality {
    pub fn as_str(self) -> &'static str {
        match self {
            FixQuality::Fresh => "fresh",
            FixQuality::Stale => "stale",
            FixQuality::Salvaged => "salvaged",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub position_id: PositionId,
    pub device_id: DeviceId,
    pub latitude: f64,
    pub longitude: f64,
    /// km/h; unknown for salvaged fixes
    pub speed: Option<f64>,
    pub battery_percent: Option<u8>,
    pub fix_quality: FixQuality,
    /// Stale fix at the same coordinates as the previous stale fix.
    #[serde(default)]
    pub repeat: bool,
    #[serde(default)]
    pub device_time: Option<DateTime<Utc>>,
    pub server_time: DateTime<Utc>,
    pub source_message_id: MessageId,
}

impl Position {
    fn key(&self) -> String {
        position_key(self.device_id, self.server_time, self.position_id)
    }
}

fn device_prefix(device: DeviceId) -> String {
    format!("{}/", ordered_u64(device.0))
}

fn time_prefix(device: DeviceId, t: DateTime<Utc>) -> String {
    format!("{}{}/", device_prefix(device), ordered_i64(t.timestamp_micros()))
}

fn position_key(device: DeviceId, t: DateTime<Utc>, id: PositionId) -> String {
    format!("{}{}", time_prefix(device, t), ordered_u64(id.0))
}

fn last_key(device: DeviceId) -> String {
    format!("last_position/{}", ordered_u64(device.0))
}

fn by_message_key(message: MessageId) -> String {
    format!("position_by_message/{}", ordered_u64(message.0))
}

/// Resume point for paginated track queries: the last position returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackCursor {
    pub server_time: DateTime<Utc>,
    pub position_id: PositionId,
}

impl fmt::Display for TrackCursor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.server_time.timestamp_micros(), self.position_id)
    }
}

impl FromStr for TrackCursor {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PipelineError::BadCursor(s.to_owned());
        let (t, id) = s.split_once('.').ok_or_else(bad)?;
        let micros: i64 = t.parse().map_err(|_| bad())?;
        Ok(Self {
            server_time: DateTime::from_timestamp_micros(micros).ok_or_else(bad)?,
            position_id: id.parse().map_err(|_| bad())?,
        })
    }
}

impl From<&Position> for TrackCursor {
    fn from(p: &Position) -> Self {
        Self {
            server_time: p.server_time,
            position_id: p.position_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackPage {
    pub positions: Vec<Position>,
    /// Present when more positions may follow.
    pub next: Option<TrackCursor>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IngestOutcome {
    Stored(Position),
    /// The source message was ingested before.
    Duplicate(Position),
    /// Nothing usable in the message.
    Skipped,
}

impl IngestOutcome {
    pub fn position(&self) -> Option<&Position> {
        match self {
            IngestOutcome::Stored(p) | IngestOutcome::Duplicate(p) => Some(p),
            IngestOutcome::Skipped => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Csv,
    Geojson,
}

impl FromStr for ExportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ExportFormat::Csv),
            "geojson" | "json" => Ok(ExportFormat::Geojson),
            other => Err(format!("unknown export format {other:?}: expected csv or geojson")),
        }
    }
}

pub struct Pipeline {
    store: Arc<dyn StorePort>,
}

impl fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Pipeline")
    }
}

impl Pipeline {
    pub fn new(store: Arc<dyn StorePort>) -> Self {
        Self { store }
    }

    /// Work out what ingesting `msg` would store, without committing. The
    /// returned batch must be committed before the next call to `prepare`.
    pub fn prepare(
        &self,
        registry: &Registry,
        device_id: DeviceId,
        msg: &TrackerMessage,
        server_time: DateTime<Utc>,
        source: MessageId,
    ) -> Result<(IngestOutcome, WriteBatch), PipelineError> {
        if registry.device(device_id).is_none() {
            return Err(PipelineError::UnknownDevice(device_id));
        }
        let mut batch = WriteBatch::new();
        if let Some(key) = self.store.get_json::<String>(Namespace::Meta, &by_message_key(source))? {
            if let Some(p) = self.store.get_json::<Position>(Namespace::Positions, &key)? {
                return Ok((IngestOutcome::Duplicate(p), batch));
            }
        }

        let (latitude, longitude, speed, battery, quality, device_time) = match msg {
            TrackerMessage::Fix(r) => (r.latitude, r.longitude, Some(r.speed), Some(r.battery_percent), FixQuality::Fresh, r.device_time),
            TrackerMessage::LastKnownFix(r) => {
                (r.latitude, r.longitude, Some(r.speed), Some(r.battery_percent), FixQuality::Stale, r.device_time)
            }
            TrackerMessage::Incomplete { salvaged: Some(s), .. } => {
                (s.latitude, s.longitude, None, None, FixQuality::Salvaged, None)
            }
            TrackerMessage::Incomplete { salvaged: None, .. } | TrackerMessage::Unrecognized { .. } => {
                return Ok((IngestOutcome::Skipped, batch));
            }
        };
        if !is_valid_latitude(latitude) || !is_valid_longitude(longitude) {
            return Err(PipelineError::InvalidCoordinates(latitude, longitude));
        }

        let last = self.last_position(device_id)?;
        let mut server_time = server_time;
        let mut repeat = false;
        if let Some(last) = &last {
            if server_time <= last.server_time {
                server_time = last.server_time + Duration::microseconds(1);
            }
            repeat = quality == FixQuality::Stale
                && last.fix_quality == FixQuality::Stale
                && last.latitude == latitude
                && last.longitude == longitude;
        }
        let next_id = self.store.get_json::<u64>(Namespace::Meta, NEXT_POSITION_KEY)?.unwrap_or(1);
        let position = Position {
            position_id: PositionId(next_id),
            device_id,
            latitude,
            longitude,
            speed,
            battery_percent: battery,
            fix_quality: quality,
            repeat,
            device_time,
            server_time,
            source_message_id: source,
        };
        let key = position.key();
        batch.put(Namespace::Positions, key.clone(), &position)?;
        batch.put(Namespace::Meta, last_key(device_id), &position)?;
        batch.put(Namespace::Meta, by_message_key(source), &key)?;
        batch.put(Namespace::Meta, NEXT_POSITION_KEY, &(next_id + 1))?;
        Ok((IngestOutcome::Stored(position), batch))
    }

    /// Store whatever position `msg` carries. Idempotent on `source`.
    pub fn ingest(
        &self,
        registry: &Registry,
        device_id: DeviceId,
        msg: &TrackerMessage,
        server_time: DateTime<Utc>,
        source: MessageId,
    ) -> Result<IngestOutcome, PipelineError> {
        let (outcome, batch) = self.prepare(registry, device_id, msg, server_time, source)?;
        if !batch.is_empty() {
            self.store.commit(batch)?;
        }
        Ok(outcome)
    }

    pub fn last_position(&self, device_id: DeviceId) -> Result<Option<Position>, PipelineError> {
        Ok(self.store.get_json(Namespace::Meta, &last_key(device_id))?)
    }

    /// Positions with `from <= server_time <= to`, ascending.
    pub fn query_track(
        &self,
        registry: &Registry,
        device_id: DeviceId,
        from: DateTime<Utc>,
        to: DateTime<Utc>,
    ) -> Result<Vec<Position>, PipelineError> {
        Ok(self.query_page(registry, device_id, from, to, None, usize::MAX)?.positions)
    }

    /// One page of [`Pipeline::query_track`], starting after `after`.
    pub fn query_page(
        &self,
        registry: &Registry,
        device_id: DeviceId,
        from: DateTime<Utc>,
        to: DateTime<Utc>,
        after: Option<TrackCursor>,
        limit: usize,
    ) -> Result<TrackPage, PipelineError> {
        if registry.device(device_id).is_none() {
            return Err(PipelineError::UnknownDevice(device_id));
        }
        if from > to {
            return Err(PipelineError::InvalidRange { from, to });
        }
        let start = match after {
            Some(c) if c.server_time >= from => position_key(device_id, c.server_time, c.position_id),
            _ => time_prefix(device_id, from),
        };
        let end = time_prefix(device_id, to + Duration::microseconds(1));
        let rows = if limit == usize::MAX {
            self.store.scan_range(Namespace::Positions, &start, &end)?
        } else {
            self.store.scan_after(Namespace::Positions, &start, limit.saturating_add(1))?
        };
        let mut positions = Vec::new();
        for (key, raw) in rows {
            if key.as_str() >= end.as_str() {
                break;
            }
            if key.as_str() <= start.as_str() && after.is_some() {
                continue;
            }
            positions.push(crate::store::decode::<Position>(Namespace::Positions, &key, &raw)?);
        }
        let next = if positions.len() > limit {
            positions.truncate(limit);
            positions.last().map(TrackCursor::from)
        } else {
            None
        };
        Ok(TrackPage { positions, next })
    }

    pub fn export_track(
        &self,
        registry: &Registry,
        device_id: DeviceId,
        from: DateTime<Utc>,
        to: DateTime<Utc>,
        format: ExportFormat,
    ) -> Result<String, PipelineError> {
        let track = self.query_track(registry, device_id, from, to)?;
        Ok(match format {
            ExportFormat::Csv => to_csv(&track),
            ExportFormat::Geojson => to_geojson(&track).to_string(),
        })
    }
}

pub const CSV_HEADER: [&str; 6] = ["server_time", "latitude", "longitude", "speed", "battery_percent", "fix_quality"];

pub fn to_csv(track: &[Position]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for p in track {
        w.write_record([
            p.server_time.to_rfc3339_opts(chrono::SecondsFormat::Micros, true),
            format!("{:.6}", p.latitude),
            format!("{:.6}", p.longitude),
            p.speed.map(|s| format!("{s:.1}")).unwrap_or_default(),
            p.battery_percent.map(|b| b.to_string()).unwrap_or_default(),
            p.fix_quality.as_str().to_owned(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// A FeatureCollection: one LineString through the fresh fixes (when there
/// are at least two) followed by a Point per position.
pub fn to_geojson(track: &[Position]) -> Value {
    let mut features = Vec::new();
    let fresh: Vec<Value> = track
        .iter()
        .filter(|p| p.fix_quality == FixQuality::Fresh)
        .map(|p| json!([p.longitude, p.latitude]))
        .collect();
    if fresh.len() >= 2 {
        features.push(json!({
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": fresh},
            "properties": {"kind": "track", "device_id": track[0].device_id},
        }));
    }
    for p in track {
        features.push(json!({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [p.longitude, p.latitude]},
            "properties": {
                "kind": "fix",
                "device_id": p.device_id,
                "position_id": p.position_id,
                "server_time": p.server_time,
                "device_time": p.device_time,
                "speed": p.speed,
                "battery_percent": p.battery_percent,
                "fix_quality": p.fix_quality,
                "repeat": p.repeat,
            },
        }));
    }
    json!({"type": "FeatureCollection", "features": features})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{FixReport, SalvagedFix};
    use crate::registry::NewDevice;
    use crate::store::MemoryStore;

    const IMEI: &str = "359710049887761";

    fn setup() -> (Pipeline, Registry, DeviceId) {
        let store: Arc<dyn StorePort> = Arc::new(MemoryStore::new());
        let mut reg = Registry::open(store.clone()).unwrap();
        let id = reg
            .register_device(NewDevice {
                imei: IMEI.into(),
                phone_number: "+60123456789".into(),
                password: "123456".into(),
                battery_capacity_mah: None,
                label: String::new(),
            })
            .unwrap()
            .id;
        (Pipeline::new(store), reg, id)
    }

    fn t(secs: i64) -> DateTime<Utc> {
        DateTime::from_timestamp(1_717_200_000 + secs, 0).unwrap()
    }

    fn fix(lat: f64, lon: f64) -> TrackerMessage {
        TrackerMessage::Fix(FixReport::new(lat, lon, 12.5, 85, IMEI))
    }

    fn stale(lat: f64, lon: f64) -> TrackerMessage {
        TrackerMessage::LastKnownFix(FixReport::new(lat, lon, 0.0, 80, IMEI))
    }

    #[test]
    fn ingest_kinds() {
        let (p, reg, d) = setup();
        let out = p.ingest(&reg, d, &fix(5.41, 118.037), t(0), MessageId(1)).unwrap();
        let IngestOutcome::Stored(pos) = out else { panic!("{out:?}") };
        assert_eq!(pos.fix_quality, FixQuality::Fresh);
        assert_eq!(pos.battery_percent, Some(85));
        assert_eq!((pos.latitude, pos.longitude), (5.41, 118.037));

        let unrec = TrackerMessage::Unrecognized { raw: "ERROR".into() };
        assert_eq!(p.ingest(&reg, d, &unrec, t(1), MessageId(2)).unwrap(), IngestOutcome::Skipped);
        let bare = TrackerMessage::Incomplete { maps_url: "http://maps.google.com/".into(), salvaged: None };
        assert_eq!(p.ingest(&reg, d, &bare, t(2), MessageId(3)).unwrap(), IngestOutcome::Skipped);
        let salvaged = TrackerMessage::Incomplete {
            maps_url: "http://maps.google.com/maps?q=5.4,118.0".into(),
            salvaged: Some(SalvagedFix { latitude: 5.4, longitude: 118.0 }),
        };
        let pos = p.ingest(&reg, d, &salvaged, t(3), MessageId(4)).unwrap().position().cloned().unwrap();
        assert_eq!(pos.fix_quality, FixQuality::Salvaged);
        assert_eq!(pos.speed, None);

        assert!(matches!(
            p.ingest(&reg, DeviceId(9), &fix(0.0, 0.0), t(4), MessageId(5)),
            Err(PipelineError::UnknownDevice(_))
        ));
    }

    #[test]
    fn stale_repeats_are_flagged() {
        let (p, reg, d) = setup();
        let a = p.ingest(&reg, d, &stale(5.0, 118.0), t(0), MessageId(1)).unwrap();
        let b = p.ingest(&reg, d, &stale(5.0, 118.0), t(60), MessageId(2)).unwrap();
        assert!(!a.position().unwrap().repeat);
        assert!(b.position().unwrap().repeat);
        assert_eq!(p.query_track(&reg, d, t(0), t(60)).unwrap().len(), 2);
        let c = p.ingest(&reg, d, &stale(5.1, 118.0), t(120), MessageId(3)).unwrap();
        assert!(!c.position().unwrap().repeat);
    }

    #[test]
    fn idempotent_on_source_message() {
        let (p, reg, d) = setup();
        let first = p.ingest(&reg, d, &fix(1.0, 2.0), t(0), MessageId(7)).unwrap();
        let again = p.ingest(&reg, d, &fix(1.0, 2.0), t(5), MessageId(7)).unwrap();
        assert_eq!(again, IngestOutcome::Duplicate(first.position().unwrap().clone()));
        assert_eq!(p.query_track(&reg, d, t(-10), t(10)).unwrap().len(), 1);
    }

    #[test]
    fn server_time_strictly_increases() {
        let (p, reg, d) = setup();
        let a = p.ingest(&reg, d, &fix(1.0, 2.0), t(10), MessageId(1)).unwrap();
        let b = p.ingest(&reg, d, &fix(1.0, 2.1), t(10), MessageId(2)).unwrap();
        let c = p.ingest(&reg, d, &fix(1.0, 2.2), t(5), MessageId(3)).unwrap();
        let times: Vec<_> = [a, b, c].iter().map(|o| o.position().unwrap().server_time).collect();
        assert!(times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn range_and_pagination() {
        let (p, reg, d) = setup();
        assert!(p.query_track(&reg, d, t(0), t(100)).unwrap().is_empty());
        for i in 0..3 {
            p.ingest(&reg, d, &fix(1.0, i as f64), t(i * 60), MessageId(i as u64 + 1)).unwrap();
        }
        let two = p.query_track(&reg, d, t(30), t(120)).unwrap();
        assert_eq!(two.iter().map(|p| p.longitude).collect::<Vec<_>>(), [1.0, 2.0]);
        // inclusive bounds
        assert_eq!(p.query_track(&reg, d, t(60), t(60)).unwrap().len(), 1);
        assert!(matches!(p.query_track(&reg, d, t(1), t(0)), Err(PipelineError::InvalidRange { .. })));

        let mut seen = Vec::new();
        let mut cursor = None;
        let mut pages = 0;
        loop {
            let page = p.query_page(&reg, d, t(0), t(120), cursor, 1).unwrap();
            pages += 1;
            seen.extend(page.positions.iter().map(|p| p.position_id));
            match page.next {
                Some(c) => cursor = Some(c),
                None => break,
            }
        }
        assert_eq!(pages, 3);
        assert_eq!(seen, [PositionId(1), PositionId(2), PositionId(3)]);

        let c: TrackCursor = "1717200060000000.2".parse().unwrap();
        assert_eq!(c.to_string(), "1717200060000000.2");
        assert!("nope".parse::<TrackCursor>().is_err());
    }

    #[test]
    fn exports() {
        let (p, reg, d) = setup();
        let empty = to_geojson(&[]);
        assert_eq!(empty, json!({"type": "FeatureCollection", "features": []}));

        p.ingest(&reg, d, &fix(5.41, 118.037), t(0), MessageId(1)).unwrap();
        p.ingest(&reg, d, &stale(5.42, 118.04), t(60), MessageId(2)).unwrap();
        p.ingest(&reg, d, &fix(5.43, 118.05), t(120), MessageId(3)).unwrap();
        let track = p.query_track(&reg, d, t(0), t(120)).unwrap();

        let gj = to_geojson(&track);
        let features = gj["features"].as_array().unwrap();
        assert_eq!(features.len(), 4);
        assert_eq!(features[0]["geometry"]["type"], "LineString");
        assert_eq!(features[0]["geometry"]["coordinates"], json!([[118.037, 5.41], [118.05, 5.43]]));
        assert_eq!(features[2]["properties"]["fix_quality"], "stale");
        let parsed: geojson::GeoJson = gj.to_string().parse().unwrap();
        assert!(matches!(parsed, geojson::GeoJson::FeatureCollection(_)));

        let csv = p.export_track(&reg, d, t(0), t(120), ExportFormat::Csv).unwrap();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "server_time,latitude,longitude,speed,battery_percent,fix_quality");
        assert_eq!(lines[1], "2024-06-01T00:00:00.000000Z,5.410000,118.037000,12.5,85,fresh");
        assert_eq!(lines.len(), 4);
        assert_eq!("GeoJSON".parse::<ExportFormat>(), Ok(ExportFormat::Geojson));
    }
}
