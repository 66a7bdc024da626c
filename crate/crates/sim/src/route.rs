//! Piecewise-linear movement between waypoints.

use serde::{Deserialize, Serialize};

use crate::geo::{haversine_m, lerp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub lat: f64,
    pub lon: f64,
    /// Time spent parked here before leaving.
    #[serde(default)]
    pub dwell_secs: f64,
    /// Speed on the leg that starts here, km/h.
    #[serde(default = "default_speed")]
    pub speed_kmh: f64,
}

fn default_speed() -> f64 {
    30.0
}

impl Waypoint {
    pub fn at(lat: f64, lon: f64) -> Self {
        Self {
            lat,
            lon,
            dwell_secs: 0.0,
            speed_kmh: default_speed(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Segment {
    Dwell { at: (f64, f64), secs: f64 },
    Leg { from: (f64, f64), to: (f64, f64), secs: f64, speed_kmh: f64 },
}

impl Segment {
    fn secs(&self) -> f64 {
        match *self {
            Segment::Dwell { secs, .. } | Segment::Leg { secs, .. } => secs,
        }
    }
}

/// Where a locator is at a given time since the simulation started.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    segments: Vec<Segment>,
    end: (f64, f64),
    start: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutePoint {
    pub lat: f64,
    pub lon: f64,
    pub speed_kmh: f64,
}

impl Route {
    /// Needs at least one waypoint. After the last one the locator parks.
    pub fn new(waypoints: &[Waypoint]) -> Result<Self, String> {
        let first = waypoints.first().ok_or("route needs at least one waypoint")?;
        let mut segments = Vec::new();
        for (i, w) in waypoints.iter().enumerate() {
            if !(w.lat.is_finite() && (-90.0..=90.0).contains(&w.lat) && w.lon.is_finite() && (-180.0..=180.0).contains(&w.lon)) {
                return Err(format!("waypoint {i} has invalid coordinates"));
            }
            if !(w.dwell_secs.is_finite() && w.dwell_secs >= 0.0) {
                return Err(format!("waypoint {i} has a negative dwell"));
            }
            if w.dwell_secs > 0.0 {
                segments.push(Segment::Dwell { at: (w.lat, w.lon), secs: w.dwell_secs });
            }
            if let Some(next) = waypoints.get(i + 1) {
                if !(w.speed_kmh.is_finite() && w.speed_kmh > 0.0) {
                    return Err(format!("waypoint {i} needs a positive speed"));
                }
                let meters = haversine_m(w.lat, w.lon, next.lat, next.lon);
                segments.push(Segment::Leg {
                    from: (w.lat, w.lon),
                    to: (next.lat, next.lon),
                    secs: meters / (w.speed_kmh / 3.6),
                    speed_kmh: w.speed_kmh,
                });
            }
        }
        let last = waypoints.last().expect("non-empty");
        Ok(Self {
            segments,
            end: (last.lat, last.lon),
            start: (first.lat, first.lon),
        })
    }

    pub fn stationary(lat: f64, lon: f64) -> Self {
        Self::new(&[Waypoint::at(lat, lon)]).expect("valid point")
    }

    pub fn start(&self) -> (f64, f64) {
        self.start
    }

    pub fn position_at(&self, elapsed_secs: f64) -> RoutePoint {
        let mut t = elapsed_secs.max(0.0);
        for seg in &self.segments {
            if t < seg.secs() {
                return match *seg {
                    Segment::Dwell { at, .. } => RoutePoint { lat: at.0, lon: at.1, speed_kmh: 0.0 },
                    Segment::Leg { from, to, secs, speed_kmh } => {
                        let (lat, lon) = lerp(from, to, t / secs);
                        RoutePoint { lat, lon, speed_kmh }
                    }
                };
            }
            t -= seg.secs();
        }
        RoutePoint { lat: self.end.0, lon: self.end.1, speed_kmh: 0.0 }
    }
}
