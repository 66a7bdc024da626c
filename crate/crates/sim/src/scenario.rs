//! Scenario files (TOML).
//!
//! ```toml
//! seed = 42
//! start = 2024-06-01T00:00:00Z
//! duration = "14days"
//! timezone = "Asia/Kuala_Lumpur"
//!
//! [[locators]]
//! label = "truck-1"
//! imei = "356000000000001"
//! phone_number = "+60123450001"
//! password = "123456"
//! route = [{ lat = 5.41, lon = 118.03 }]
//!
//! [[groups]]
//! name = "trucks"
//! members = ["truck-1"]
//!
//! [[schedules]]
//! kind = "interval"
//! every_secs = 1200
//! target = { group = "trucks" }
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::time::Duration as StdDuration;

use chrono::{DateTime, Duration, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Deserializer};

use smstrack_core::energy::BatteryModel;
use smstrack_core::engine::Engine;
use smstrack_core::ids::DeviceId;
use smstrack_core::registry::NewDevice;
use smstrack_core::scheduler::{KindDraft, ScheduleDraft, Target, WindowDraft};

use crate::locator::LocatorSpec;

/// A scenario problem and where it is.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{location}: {message}")]
pub struct ConfigError {
    pub location: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(location: impl Into<String>, message: impl fmt::Display) -> Self {
        Self {
            location: location.into(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub name: String,
    /// Locator labels.
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSpec {
    Device(String),
    Group(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ScheduleSpec {
    #[serde(flatten)]
    pub kind: KindDraft,
    pub target: TargetSpec,
    #[serde(default)]
    pub window: Option<WindowDraft>,
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default)]
    pub timezone: Option<Tz>,
}

fn yes() -> bool {
    true
}

fn default_timeout() -> u64 {
    smstrack_core::gateway::DEFAULT_RESPONSE_TIMEOUT_SECS as u64
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    #[serde(deserialize_with = "instant")]
    pub start: DateTime<Utc>,
    /// Human-readable, e.g. `"14days"` or `"6h 30m"`.
    #[serde(deserialize_with = "human_duration")]
    pub duration: StdDuration,
    #[serde(default)]
    pub timezone: Option<Tz>,
    /// Simulated seconds per wall-clock second. Absent means as fast as
    /// possible.
    #[serde(default)]
    pub clock_acceleration: Option<f64>,
    #[serde(default = "default_timeout")]
    pub response_timeout_secs: u64,
    /// Defaults to the reference model.
    #[serde(default)]
    pub battery: Option<BatteryModel>,
    pub locators: Vec<LocatorSpec>,
    #[serde(default)]
    pub groups: Vec<GroupSpec>,
    #[serde(default)]
    pub schedules: Vec<ScheduleSpec>,
}

/// Accepts a TOML datetime or an RFC 3339 string.
fn instant<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Toml(toml::value::Datetime),
        Text(String),
    }
    let text = match Raw::deserialize(d)? {
        Raw::Toml(t) => t.to_string(),
        Raw::Text(s) => s,
    };
    DateTime::parse_from_rfc3339(&text)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| serde::de::Error::custom(format!("{text:?} is not an RFC 3339 instant with offset: {e}")))
}

fn human_duration<'de, D: Deserializer<'de>>(d: D) -> Result<StdDuration, D::Error> {
    let text = String::deserialize(d)?;
    humantime::parse_duration(&text).map_err(|e| serde::de::Error::custom(format!("{text:?}: {e}")))
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| {
            let location = match e.span() {
                Some(span) => {
                    let (line, col) = line_col(text, span.start);
                    format!("line {line}, column {col}")
                }
                None => "scenario".to_owned(),
            };
            ConfigError::new(location, e.message())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new(path.display().to_string(), e))?;
        Self::from_toml(&text).map_err(|e| ConfigError::new(format!("{}: {}", path.display(), e.location), e.message))
    }

    pub fn battery(&self) -> BatteryModel {
        self.battery.unwrap_or_else(BatteryModel::reference)
    }

    pub fn timezone(&self) -> Tz {
        self.timezone.unwrap_or(Tz::UTC)
    }

    pub fn end(&self) -> DateTime<Utc> {
        self.start + Duration::from_std(self.duration).unwrap_or(Duration::MAX)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.duration.is_zero() {
            return Err(ConfigError::new("duration", "must be positive"));
        }
        if let Some(k) = self.clock_acceleration {
            if !(k.is_finite() && k >= 1.0) {
                return Err(ConfigError::new("clock_acceleration", "must be a number >= 1"));
            }
        }
        if self.response_timeout_secs == 0 {
            return Err(ConfigError::new("response_timeout_secs", "must be positive"));
        }
        let mut labels = BTreeSet::new();
        for (i, l) in self.locators.iter().enumerate() {
            l.validate()
                .map_err(|(field, msg)| ConfigError::new(format!("locators[{i}].{field}"), msg))?;
            if !labels.insert(l.label.as_str()) {
                return Err(ConfigError::new(format!("locators[{i}].label"), format!("duplicate label {:?}", l.label)));
            }
        }
        let mut groups = BTreeSet::new();
        for (i, g) in self.groups.iter().enumerate() {
            if !groups.insert(g.name.as_str()) {
                return Err(ConfigError::new(format!("groups[{i}].name"), format!("duplicate group {:?}", g.name)));
            }
            if let Some(m) = g.members.iter().find(|m| !labels.contains(m.as_str())) {
                return Err(ConfigError::new(format!("groups[{i}].members"), format!("unknown locator {m:?}")));
            }
        }
        for (i, s) in self.schedules.iter().enumerate() {
            let known = match &s.target {
                TargetSpec::Device(l) => labels.contains(l.as_str()),
                TargetSpec::Group(g) => groups.contains(g.as_str()),
            };
            if !known {
                return Err(ConfigError::new(format!("schedules[{i}].target"), format!("unknown target {:?}", s.target)));
            }
        }
        Ok(())
    }

    /// Register this scenario's locators, groups and schedules with `engine`.
    /// Returns device ids in locator order.
    pub fn install(&self, engine: &mut Engine, now: DateTime<Utc>) -> Result<Vec<DeviceId>, ConfigError> {
        let capacity = self.battery().capacity_mah();
        let mut ids = Vec::new();
        let mut by_label = HashMap::new();
        for (i, l) in self.locators.iter().enumerate() {
            let device = engine
                .registry_mut()
                .register_device(NewDevice {
                    imei: l.imei.clone(),
                    phone_number: l.phone_number.clone(),
                    password: l.password.clone(),
                    battery_capacity_mah: Some(l.capacity_mah.unwrap_or(capacity)),
                    label: l.label.clone(),
                })
                .map_err(|e| ConfigError::new(format!("locators[{i}]"), e))?;
            by_label.insert(l.label.as_str(), device.id);
            ids.push(device.id);
        }
        let mut group_ids = HashMap::new();
        for (i, g) in self.groups.iter().enumerate() {
            let members = g.members.iter().map(|m| by_label[m.as_str()]).collect();
            let group = engine
                .registry_mut()
                .create_group(&g.name, members)
                .map_err(|e| ConfigError::new(format!("groups[{i}]"), e))?;
            group_ids.insert(g.name.as_str(), group.id);
        }
        for (i, s) in self.schedules.iter().enumerate() {
            let target = match &s.target {
                TargetSpec::Device(l) => Target::Device(by_label[l.as_str()]),
                TargetSpec::Group(g) => Target::Group(group_ids[g.as_str()]),
            };
            let draft = ScheduleDraft {
                kind: s.kind.clone(),
                target,
                window: s.window.clone(),
                enabled: s.enabled,
                timezone: s.timezone,
            };
            let (scheduler, registry) = engine.scheduler_mut();
            scheduler
                .create(&draft, registry, now)
                .map_err(|e| ConfigError::new(format!("schedules[{i}]"), e))?;
        }
        Ok(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 42
start = 2024-06-01T00:00:00Z
duration = "14days"
timezone = "Asia/Kuala_Lumpur"

[battery]
capacity_mah = 850.0
idle_draw_ma = 11.0
per_request_mah = 1.0

[[locators]]
label = "truck-1"
imei = "356000000000001"
phone_number = "+60123450001"
password = "123456"
route = [{ lat = 5.41, lon = 118.03, dwell_secs = 600 }, { lat = 5.42, lon = 118.04 }]

[[groups]]
name = "trucks"
members = ["truck-1"]

[[schedules]]
kind = "cron"
expr = "*/20 * * * *"
target = { group = "trucks" }
window = { start = "14:00", end = "19:00", days = ["sat", "sun"] }
"#;

    #[test]
    fn parses_sample() {
        let c = ScenarioConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(c.seed, 42);
        assert_eq!(c.duration, StdDuration::from_secs(14 * 86_400));
        assert_eq!(c.timezone(), chrono_tz::Asia::Kuala_Lumpur);
        assert_eq!(c.battery().idle_draw_ma(), 11.0);
        assert_eq!(c.locators[0].route.len(), 2);
        assert_eq!(c.schedules[0].target, TargetSpec::Group("trucks".into()));
        assert!(matches!(c.schedules[0].kind, KindDraft::Cron { .. }));
        assert_eq!(c.response_timeout_secs, 180);
    }

    #[test]
    fn string_start_is_accepted() {
        let text = SAMPLE.replace("start = 2024-06-01T00:00:00Z", "start = \"2024-06-01T08:00:00+08:00\"");
        let c = ScenarioConfig::from_toml(&text).unwrap();
        assert_eq!(c.start, ScenarioConfig::from_toml(SAMPLE).unwrap().start);
    }

    #[test]
    fn errors_carry_locations() {
        let bad_line = SAMPLE.replace("seed = 42", "seed = \"x\"");
        let e = ScenarioConfig::from_toml(&bad_line).unwrap_err();
        assert_eq!(e.location, "line 2, column 8", "{e}");

        let bad_member = SAMPLE.replace("members = [\"truck-1\"]", "members = [\"truck-9\"]");
        let e = ScenarioConfig::from_toml(&bad_member).unwrap_err();
        assert_eq!(e.location, "groups[0].members");

        let bad_prob = SAMPLE.replace("password = \"123456\"", "password = \"123456\"\nfix_success_prob = 2.0");
        let e = ScenarioConfig::from_toml(&bad_prob).unwrap_err();
        assert_eq!(e.location, "locators[0].fix_success_prob");

        let bad_duration = SAMPLE.replace("\"14days\"", "\"fortnight\"");
        assert!(ScenarioConfig::from_toml(&bad_duration).is_err());
    }
}
