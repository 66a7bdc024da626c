//! Two-parameter battery model: constant idle draw plus a fixed charge per
//! locate/response cycle.

use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scheduler::Schedule;

/// Lifetimes measured on 850 mAh locators: `(interval, lifetime)` in minutes.
pub const REFERENCE_POINTS: [(f64, f64); 2] = [(1.0, 715.0), (20.0, 3637.0)];
pub const REFERENCE_CAPACITY_MAH: f64 = 850.0;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("need at least two points with distinct intervals, got {0}")]
    TooFewPoints(usize),
    #[error("point ({interval}, {lifetime}) must have positive interval and lifetime")]
    InvalidPoint { interval: f64, lifetime: f64 },
    #[error("{field} must be positive and finite, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("points force a non-positive parameter (idle {idle_rate} mAh/min, per request {per_request} mAh)")]
    DegenerateFit { idle_rate: f64, per_request: f64 },
    #[error("model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("model file: {0}")]
    Format(#[from] toml::ser::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct BatteryModel {
    capacity_mah: f64,
    idle_draw_ma: f64,
    per_request_mah: f64,
}

#[derive(Deserialize)]
struct RawModel {
    capacity_mah: f64,
    idle_draw_ma: f64,
    per_request_mah: f64,
}

impl TryFrom<RawModel> for BatteryModel {
    type Error = EnergyError;
    fn try_from(r: RawModel) -> Result<Self, Self::Error> {
        BatteryModel::new(r.capacity_mah, r.idle_draw_ma, r.per_request_mah)
    }
}

fn positive(field: &'static str, value: f64) -> Result<f64, EnergyError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(EnergyError::NonPositive { field, value })
    }
}

impl BatteryModel {
    pub fn new(capacity_mah: f64, idle_draw_ma: f64, per_request_mah: f64) -> Result<Self, EnergyError> {
        Ok(Self {
            capacity_mah: positive("capacity_mah", capacity_mah)?,
            idle_draw_ma: positive("idle_draw_ma", idle_draw_ma)?,
            per_request_mah: positive("per_request_mah", per_request_mah)?,
        })
    }

    /// The model fitted to the reference measurements.
    pub fn reference() -> Self {
        fit_battery_model(&REFERENCE_POINTS, REFERENCE_CAPACITY_MAH).expect("reference points fit")
    }

    pub fn capacity_mah(&self) -> f64 {
        self.capacity_mah
    }

    pub fn idle_draw_ma(&self) -> f64 {
        self.idle_draw_ma
    }

    /// Idle consumption in mAh per minute.
    pub fn idle_rate(&self) -> f64 {
        self.idle_draw_ma / 60.0
    }

    pub fn per_request_mah(&self) -> f64 {
        self.per_request_mah
    }

    /// Same model with another capacity, e.g. for 1000 mAh units.
    pub fn with_capacity(&self, capacity_mah: f64) -> Result<Self, EnergyError> {
        Self::new(capacity_mah, self.idle_draw_ma, self.per_request_mah)
    }

    /// Upper bound on lifetime: idle draw only, in minutes.
    pub fn idle_lifetime(&self) -> f64 {
        self.capacity_mah / self.idle_rate()
    }

    pub fn load(path: &Path) -> Result<Self, EnergyError> {
        Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), EnergyError> {
        std::fs::write(path, toml::to_string(self)?)?;
        Ok(())
    }
}

/// Least-squares fit of `L*idle_rate + (L/interval)*per_request = capacity`.
pub fn fit_battery_model(points: &[(f64, f64)], capacity_mah: f64) -> Result<BatteryModel, EnergyError> {
    positive("capacity_mah", capacity_mah)?;
    for &(interval, lifetime) in points {
        if !(interval.is_finite() && interval > 0.0 && lifetime.is_finite() && lifetime > 0.0) {
            return Err(EnergyError::InvalidPoint { interval, lifetime });
        }
    }
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(EnergyError::TooFewPoints(distinct.len()));
    }

    // normal equations for rows [L, L/Δ]
    let (mut s11, mut s12, mut s22, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(interval, lifetime) in points {
        let (x1, x2) = (lifetime, lifetime / interval);
        s11 += x1 * x1;
        s12 += x1 * x2;
        s22 += x2 * x2;
        r1 += x1 * capacity_mah;
        r2 += x2 * capacity_mah;
    }
    let det = s11 * s22 - s12 * s12;
    let idle_rate = (r1 * s22 - r2 * s12) / det;
    let per_request = (s11 * r2 - s12 * r1) / det;
    if !(idle_rate.is_finite() && per_request.is_finite() && idle_rate > 0.0 && per_request > 0.0) {
        return Err(EnergyError::DegenerateFit { idle_rate, per_request });
    }
    BatteryModel::new(capacity_mah, idle_rate * 60.0, per_request)
}

/// Lifetime in minutes when polled every `interval_minutes`.
pub fn predict_lifetime(model: &BatteryModel, interval_minutes: f64) -> f64 {
    model.capacity_mah / (model.idle_rate() + model.per_request_mah / interval_minutes)
}

/// Lifetime in minutes of a fresh battery following `schedule` from `start`.
///
/// Walks the calendar a day at a time; the day in which the battery runs out
/// is replayed request by request.
pub fn predict_lifetime_for_schedule(model: &BatteryModel, schedule: &Schedule, start: DateTime<Utc>) -> f64 {
    let idle = model.idle_rate();
    let day_minutes = 1440.0;
    let mut remaining = model.capacity_mah;
    let mut day_start = start;
    loop {
        let day_end = day_start + Duration::days(1);
        let requests = schedule.windowed_instants(day_start, day_end).count() as f64;
        let need = idle * day_minutes + requests * model.per_request_mah;
        let elapsed = (day_start - start).num_microseconds().unwrap_or(i64::MAX) as f64 / 60e6;
        if need < remaining {
            remaining -= need;
            day_start = day_end;
            continue;
        }
        // runs out today
        let mut t = 0.0;
        for fire in schedule.windowed_instants(day_start, day_end) {
            let at = (fire - day_start).num_microseconds().unwrap_or(0) as f64 / 60e6;
            let idle_until_fire = idle * (at - t);
            if idle_until_fire >= remaining {
                break;
            }
            remaining -= idle_until_fire;
            t = at;
            if model.per_request_mah >= remaining {
                return elapsed + t;
            }
            remaining -= model.per_request_mah;
        }
        return elapsed + t + remaining / idle;
    }
}
