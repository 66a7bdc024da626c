//! Locator SMS grammar.
//!
//! Commands flow from server to locator, responses flow back. Everything here
//! is pure text processing, no I/O.
//!
//! ```text
//! Command:   smslink<6-digit password>
//! Fix:       lat:<deg> lon:<deg> speed:<km/h> bat:<pct>% id:<imei> [time:<rfc3339>] <maps url>
//! Stale:     LAST lat:<deg> lon:<deg> speed:<km/h> bat:<pct>% id:<imei> [time:<rfc3339>] <maps url>
//! Degraded:  <maps url>
//! ```
//!
//! Coordinates are written with six decimals, speed with one.

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Prefix of the locate command body.
pub const LOCATE_PREFIX: &str = "smslink";

/// Leading token marking a cached (last-known) position.
pub const STALE_MARKER: &str = "LAST";

/// Longest body that fits a single-part 7-bit SMS.
pub const MAX_SMS_LEN: usize = 160;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("invalid password: expected exactly six decimal digits")]
    InvalidPassword,
    #[error("cannot format a {0:?} message; only fixes have a canonical form")]
    NotFormattable(MessageKind),
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: &'static str, reason: String },
}

/// Checks the six-digit password rule shared by the codec and the registry.
pub fn is_valid_password(password: &str) -> bool {
    password.len() == 6 && password.bytes().all(|b| b.is_ascii_digit())
}

/// Checks the fifteen-digit IMEI rule.
pub fn is_valid_imei(imei: &str) -> bool {
    imei.len() == 15 && imei.bytes().all(|b| b.is_ascii_digit())
}

pub fn is_valid_latitude(lat: f64) -> bool {
    lat.is_finite() && (-90.0..=90.0).contains(&lat)
}

pub fn is_valid_longitude(lon: f64) -> bool {
    lon.is_finite() && (-180.0..=180.0).contains(&lon)
}

/// A validated locate command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocateCommand {
    password: String,
}

impl LocateCommand {
    pub fn new(password: &str) -> Result<Self, CodecError> {
        if !is_valid_password(password) {
            return Err(CodecError::InvalidPassword);
        }
        Ok(Self {
            password: password.to_owned(),
        })
    }

    pub fn password(&self) -> &str {
        &self.password
    }

    pub fn encode(&self) -> String {
        format!("{LOCATE_PREFIX}{}", self.password)
    }
}

/// Encode the locate command body for `password`.
pub fn encode_locate_command(password: &str) -> Result<String, CodecError> {
    LocateCommand::new(password).map(|c| c.encode())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Fix,
    LastKnownFix,
    Incomplete,
    Unrecognized,
}

/// Structured payload shared by fresh and last-known fixes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixReport {
    pub latitude: f64,
    pub longitude: f64,
    /// km/h
    pub speed: f64,
    pub battery_percent: u8,
    pub maps_url: String,
    pub imei: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_time: Option<DateTime<Utc>>,
}

impl FixReport {
    /// Builds a report whose maps link points at the given coordinates.
    pub fn new(latitude: f64, longitude: f64, speed: f64, battery_percent: u8, imei: &str) -> Self {
        Self {
            latitude,
            longitude,
            speed,
            battery_percent,
            maps_url: maps_url(latitude, longitude),
            imei: imei.to_owned(),
            device_time: None,
        }
    }

    fn validate(&self) -> Result<(), CodecError> {
        let bad = |field, reason: &str| {
            Err(CodecError::InvalidField {
                field,
                reason: reason.to_owned(),
            })
        };
        if !is_valid_latitude(self.latitude) {
            return bad("lat", "out of range [-90, 90]");
        }
        if !is_valid_longitude(self.longitude) {
            return bad("lon", "out of range [-180, 180]");
        }
        if !(self.speed.is_finite() && self.speed >= 0.0) {
            return bad("speed", "must be a non-negative number");
        }
        if self.battery_percent > 100 {
            return bad("bat", "must be within 0..=100");
        }
        if !is_valid_imei(&self.imei) {
            return bad("id", "must be 15 decimal digits");
        }
        if !is_maps_url(&self.maps_url) || self.maps_url.contains(char::is_whitespace) {
            return bad("url", "must be a maps link without whitespace");
        }
        Ok(())
    }
}

/// Coordinates recovered from a degraded reply. Always low quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SalvagedFix {
    pub latitude: f64,
    pub longitude: f64,
}

/// One decoded inbound SMS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrackerMessage {
    Fix(FixReport),
    LastKnownFix(FixReport),
    Incomplete {
        maps_url: String,
        salvaged: Option<SalvagedFix>,
    },
    Unrecognized {
        raw: String,
    },
}

impl TrackerMessage {
    pub fn kind(&self) -> MessageKind {
        match self {
            TrackerMessage::Fix(_) => MessageKind::Fix,
            TrackerMessage::LastKnownFix(_) => MessageKind::LastKnownFix,
            TrackerMessage::Incomplete { .. } => MessageKind::Incomplete,
            TrackerMessage::Unrecognized { .. } => MessageKind::Unrecognized,
        }
    }

    pub fn report(&self) -> Option<&FixReport> {
        match self {
            TrackerMessage::Fix(r) | TrackerMessage::LastKnownFix(r) => Some(r),
            _ => None,
        }
    }
}

/// Canonical maps link for a coordinate pair.
pub fn maps_url(latitude: f64, longitude: f64) -> String {
    format!("http://maps.google.com/maps?q={latitude:.6},{longitude:.6}")
}

fn is_maps_url(token: &str) -> bool {
    let lower = token.to_ascii_lowercase();
    (lower.starts_with("http://") || lower.starts_with("https://")) && lower.contains("maps")
}

/// Pull the `q=<lat>,<lon>` pair out of a maps link.
pub fn salvage_coordinates_from_url(url: &str) -> Option<(f64, f64)> {
    let query = url.split_once('?')?.1;
    let value = query
        .split('&')
        .find_map(|pair| pair.strip_prefix("q="))?;
    let (lat, lon) = value.split_once(',')?;
    let lat: f64 = lat.trim().parse().ok()?;
    let lon: f64 = lon.trim().parse().ok()?;
    (is_valid_latitude(lat) && is_valid_longitude(lon)).then_some((lat, lon))
}

/// Classify and decode one inbound SMS body. Never fails.
pub fn parse_tracker_response(raw: &str) -> TrackerMessage {
    let mut tokens: Vec<&str> = raw.split_whitespace().collect();
    if tokens.is_empty() {
        return unrecognized(raw);
    }
    let stale = tokens[0] == STALE_MARKER;
    if stale {
        tokens.remove(0);
    }
    if let Some(report) = parse_fields(&tokens) {
        return if stale {
            TrackerMessage::LastKnownFix(report)
        } else {
            TrackerMessage::Fix(report)
        };
    }
    if let Some(url) = tokens.iter().find(|t| is_maps_url(t)) {
        let salvaged = salvage_coordinates_from_url(url).map(|(latitude, longitude)| SalvagedFix {
            latitude,
            longitude,
        });
        return TrackerMessage::Incomplete {
            maps_url: (*url).to_owned(),
            salvaged,
        };
    }
    unrecognized(raw)
}

fn unrecognized(raw: &str) -> TrackerMessage {
    TrackerMessage::Unrecognized {
        raw: raw.to_owned(),
    }
}

fn parse_fields(tokens: &[&str]) -> Option<FixReport> {
    let mut lat = None;
    let mut lon = None;
    let mut speed = None;
    let mut bat = None;
    let mut imei = None;
    let mut time = None;
    let mut url = None;

    fn set<T>(slot: &mut Option<T>, value: Option<T>) -> Option<()> {
        // repeated keys make the message ambiguous
        if slot.is_some() {
            return None;
        }
        *slot = Some(value?);
        Some(())
    }

    for token in tokens {
        if is_maps_url(token) {
            set(&mut url, Some((*token).to_owned()))?;
            continue;
        }
        let (key, value) = token.split_once(':')?;
        match key {
            "lat" => set(&mut lat, value.parse::<f64>().ok().filter(|v| is_valid_latitude(*v)))?,
            "lon" => set(&mut lon, value.parse::<f64>().ok().filter(|v| is_valid_longitude(*v)))?,
            "speed" => set(
                &mut speed,
                value.parse::<f64>().ok().filter(|v| v.is_finite() && *v >= 0.0),
            )?,
            "bat" => set(
                &mut bat,
                value
                    .strip_suffix('%')
                    .and_then(|v| v.parse::<u8>().ok())
                    .filter(|v| *v <= 100),
            )?,
            "id" => set(&mut imei, Some(value).filter(|v| is_valid_imei(v)).map(str::to_owned))?,
            "time" => set(
                &mut time,
                DateTime::parse_from_rfc3339(value)
                    .ok()
                    .map(|t| t.with_timezone(&Utc)),
            )?,
            _ => {}
        }
    }

    Some(FixReport {
        latitude: lat?,
        longitude: lon?,
        speed: speed?,
        battery_percent: bat?,
        maps_url: url?,
        imei: imei?,
        device_time: time,
    })
}

/// Emit the canonical text for a fix. Inverse of [`parse_tracker_response`].
pub fn format_tracker_response(msg: &TrackerMessage) -> Result<String, CodecError> {
    let (report, stale) = match msg {
        TrackerMessage::Fix(r) => (r, false),
        TrackerMessage::LastKnownFix(r) => (r, true),
        other => return Err(CodecError::NotFormattable(other.kind())),
    };
    report.validate()?;

    let mut out = String::with_capacity(MAX_SMS_LEN);
    if stale {
        out.push_str(STALE_MARKER);
        out.push(' ');
    }
    out.push_str(&format!(
        "lat:{:.6} lon:{:.6} speed:{:.1} bat:{}% id:{}",
        report.latitude, report.longitude, report.speed, report.battery_percent, report.imei
    ));
    if let Some(t) = report.device_time {
        out.push_str(" time:");
        out.push_str(&t.to_rfc3339_opts(SecondsFormat::Secs, true));
    }
    out.push(' ');
    out.push_str(&report.maps_url);
    Ok(out)
}
