//! A virtual GPS locator: battery, position and reply behaviour.

use chrono::{DateTime, Duration, DurationRound, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use smstrack_core::codec::{encode_locate_command, format_tracker_response, maps_url, FixReport, MessageKind, TrackerMessage};
use smstrack_core::energy::BatteryModel;

use crate::error_model::RadialErrorModel;
use crate::geo::offset_m;
use crate::latency::LatencyModel;
use crate::route::{Route, Waypoint};

/// Scenario-level description of one locator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocatorSpec {
    pub label: String,
    pub imei: String,
    pub phone_number: String,
    pub password: String,
    /// Falls back to the scenario battery capacity.
    #[serde(default)]
    pub capacity_mah: Option<f64>,
    #[serde(default = "default_fix_success")]
    pub fix_success_prob: f64,
    #[serde(default = "default_incomplete")]
    pub incomplete_prob: f64,
    #[serde(default)]
    pub latency: LatencyModel,
    #[serde(default)]
    pub error: RadialErrorModel,
    pub route: Vec<Waypoint>,
}

fn default_fix_success() -> f64 {
    0.95
}

fn default_incomplete() -> f64 {
    0.02
}

impl LocatorSpec {
    pub fn stationary(label: &str, imei: &str, phone: &str, lat: f64, lon: f64) -> Self {
        Self {
            label: label.to_owned(),
            imei: imei.to_owned(),
            phone_number: phone.to_owned(),
            password: "123456".to_owned(),
            capacity_mah: None,
            fix_success_prob: default_fix_success(),
            incomplete_prob: default_incomplete(),
            latency: LatencyModel::default(),
            error: RadialErrorModel::default(),
            route: vec![Waypoint::at(lat, lon)],
        }
    }

    /// Problems as `(field, message)`.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let prob = |p: f64| p.is_finite() && (0.0..=1.0).contains(&p);
        if !prob(self.fix_success_prob) {
            return Err(("fix_success_prob", "must lie in [0, 1]".into()));
        }
        if !prob(self.incomplete_prob) {
            return Err(("incomplete_prob", "must lie in [0, 1]".into()));
        }
        if let Some(c) = self.capacity_mah {
            if !(c.is_finite() && c > 0.0) {
                return Err(("capacity_mah", "must be positive".into()));
            }
        }
        self.latency.validate().map_err(|e| ("latency", e))?;
        let e = &self.error;
        if !(e.sigma1 >= 0.0 && e.sigma2 >= 0.0 && prob(e.p)) {
            return Err(("error", "sigmas must be non-negative and p in [0, 1]".into()));
        }
        Route::new(&self.route).map_err(|m| ("route", m))?;
        encode_locate_command(&self.password).map_err(|e| ("password", e.to_string()))?;
        Ok(())
    }
}

/// What a locator sends back for one locate command.
#[derive(Debug, Clone, PartialEq)]
pub struct LocateReply {
    pub kind: MessageKind,
    pub body: String,
    pub delay_secs: f64,
    /// Where the locator actually was.
    pub true_position: (f64, f64),
    /// Coordinates it reported, before wire rounding.
    pub reported: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct VirtualLocator {
    spec: LocatorSpec,
    route: Route,
    battery: BatteryModel,
    command: String,
    start: DateTime<Utc>,
    remaining_mah: f64,
    drained_to: DateTime<Utc>,
    depleted_at: Option<DateTime<Utc>>,
    last_fix: Option<(f64, f64)>,
    rng: ChaCha8Rng,
    requests: u64,
    replies: u64,
}

fn minutes(d: Duration) -> f64 {
    d.num_microseconds().unwrap_or(i64::MAX) as f64 / 60e6
}

impl VirtualLocator {
    /// `battery` supplies the draw figures; its capacity is overridden by the
    /// spec when given. Each `stream` gets an independent random sequence.
    pub fn new(spec: LocatorSpec, battery: &BatteryModel, seed: u64, stream: u64, start: DateTime<Utc>) -> Result<Self, String> {
        spec.validate().map_err(|(f, m)| format!("{f}: {m}"))?;
        let battery = match spec.capacity_mah {
            Some(c) => battery.with_capacity(c).map_err(|e| e.to_string())?,
            None => *battery,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Ok(Self {
            route: Route::new(&spec.route)?,
            command: encode_locate_command(&spec.password).map_err(|e| e.to_string())?,
            remaining_mah: battery.capacity_mah(),
            battery,
            spec,
            start,
            drained_to: start,
            depleted_at: None,
            last_fix: None,
            rng,
            requests: 0,
            replies: 0,
        })
    }

    pub fn spec(&self) -> &LocatorSpec {
        &self.spec
    }

    pub fn battery(&self) -> &BatteryModel {
        &self.battery
    }

    pub fn remaining_mah(&self) -> f64 {
        self.remaining_mah
    }

    pub fn depleted_at(&self) -> Option<DateTime<Utc>> {
        self.depleted_at
    }

    pub fn requests(&self) -> u64 {
        self.requests
    }

    pub fn replies(&self) -> u64 {
        self.replies
    }

    pub fn battery_percent(&self) -> u8 {
        (100.0 * self.remaining_mah / self.battery.capacity_mah()).round().clamp(0.0, 100.0) as u8
    }

    /// When idle draw alone would empty the battery.
    pub fn depletion_eta(&self) -> Option<DateTime<Utc>> {
        if self.depleted_at.is_some() {
            return None;
        }
        let mins = self.remaining_mah / self.battery.idle_rate();
        let micros = (mins * 60e6).ceil().min(i64::MAX as f64 / 2.0) as i64;
        Some(self.drained_to + Duration::microseconds(micros))
    }

    /// Apply idle draw up to `t`. Returns the depletion instant if the
    /// battery ran out on the way.
    pub fn drain_to(&mut self, t: DateTime<Utc>) -> Option<DateTime<Utc>> {
        if self.depleted_at.is_some() || t <= self.drained_to {
            return None;
        }
        let eta = self.depletion_eta().expect("not depleted");
        if eta <= t {
            self.remaining_mah = 0.0;
            self.drained_to = eta;
            self.depleted_at = Some(eta);
            return Some(eta);
        }
        self.remaining_mah -= self.battery.idle_rate() * minutes(t - self.drained_to);
        self.drained_to = t;
        None
    }

    /// True if `body` is this locator's locate command.
    pub fn accepts(&self, body: &str) -> bool {
        body.trim() == self.command
    }

    /// Handle a locate command received at `now`. `None` once the battery
    /// cannot cover the request; the locator is then dead.
    pub fn respond_to_locate(&mut self, now: DateTime<Utc>) -> Option<LocateReply> {
        self.drain_to(now);
        if self.depleted_at.is_some() {
            return None;
        }
        self.requests += 1;
        if self.remaining_mah < self.battery.per_request_mah() {
            self.remaining_mah = 0.0;
            self.depleted_at = Some(now);
            return None;
        }
        self.remaining_mah -= self.battery.per_request_mah();

        // fixed draw order keeps streams aligned across reply kinds
        let u_incomplete: f64 = self.rng.random();
        let u_fix: f64 = self.rng.random();
        let (east, north) = self.spec.error.sample_radial_error(&mut self.rng);
        let delay_secs = self.spec.latency.sample(&mut self.rng);

        let elapsed = (now - self.start).num_microseconds().unwrap_or(0) as f64 / 1e6;
        let here = self.route.position_at(elapsed);
        let noisy = offset_m(here.lat, here.lon, east, north);
        let device_time = now.duration_trunc(Duration::seconds(1)).ok();

        let (kind, body, reported) = if u_incomplete < self.spec.incomplete_prob {
            self.last_fix = Some(noisy);
            (MessageKind::Incomplete, maps_url(noisy.0, noisy.1), noisy)
        } else if u_fix < self.spec.fix_success_prob {
            self.last_fix = Some(noisy);
            let mut report = FixReport::new(noisy.0, noisy.1, here.speed_kmh, self.battery_percent(), &self.spec.imei);
            report.device_time = device_time;
            let body = format_tracker_response(&TrackerMessage::Fix(report)).expect("valid fix");
            (MessageKind::Fix, body, noisy)
        } else {
            let last = self.last_fix.unwrap_or_else(|| self.route.start());
            let mut report = FixReport::new(last.0, last.1, 0.0, self.battery_percent(), &self.spec.imei);
            report.device_time = device_time;
            let body = format_tracker_response(&TrackerMessage::LastKnownFix(report)).expect("valid fix");
            (MessageKind::LastKnownFix, body, last)
        };
        self.replies += 1;
        Some(LocateReply {
            kind,
            body,
            delay_secs,
            true_position: (here.lat, here.lon),
            reported,
        })
    }
}
