//! Activation windows: a weekday mask and a half-open time-of-day range in a
//! named zone, e.g. weekends 14:00-19:00 Asia/Kuala_Lumpur.

use std::fmt;

use chrono::{DateTime, Datelike, Timelike, Utc, Weekday};
use chrono_tz::Tz;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WindowError {
    #[error("invalid time of day {0:?}: expected HH:MM")]
    BadTime(String),
    #[error("window start {start} must be before end {end}; split overnight windows in two")]
    Empty { start: TimeOfDay, end: TimeOfDay },
    #[error("window must allow at least one weekday")]
    NoDays,
    #[error("unknown weekday {0:?}")]
    BadDay(String),
}

/// Minutes since local midnight, `0..=1440`. `24:00` is only useful as an end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeOfDay(u16);

impl TimeOfDay {
    pub fn new(hour: u16, minute: u16) -> Option<Self> {
        (minute < 60 && (hour < 24 || (hour == 24 && minute == 0))).then_some(Self(hour * 60 + minute))
    }

    pub fn minutes(self) -> u16 {
        self.0
    }

    pub fn parse(s: &str) -> Result<Self, WindowError> {
        let bad = || WindowError::BadTime(s.to_owned());
        let (h, m) = s.split_once(':').ok_or_else(bad)?;
        if h.is_empty() || h.len() > 2 || m.len() != 2 {
            return Err(bad());
        }
        let h: u16 = h.parse().map_err(|_| bad())?;
        let m: u16 = m.parse().map_err(|_| bad())?;
        Self::new(h, m).ok_or_else(bad)
    }
}

impl fmt::Display for TimeOfDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}:{:02}", self.0 / 60, self.0 % 60)
    }
}

impl Serialize for TimeOfDay {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TimeOfDay {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        TimeOfDay::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Set of weekdays, serialized as a list of three-letter names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct DaySet(u8);

const DAY_NAMES: [(&str, Weekday); 7] = [
    ("mon", Weekday::Mon),
    ("tue", Weekday::Tue),
    ("wed", Weekday::Wed),
    ("thu", Weekday::Thu),
    ("fri", Weekday::Fri),
    ("sat", Weekday::Sat),
    ("sun", Weekday::Sun),
];

impl DaySet {
    pub const WEEKENDS: DaySet = DaySet(0b110_0000);
    pub const ALL: DaySet = DaySet(0b111_1111);

    pub fn from_days(days: impl IntoIterator<Item = Weekday>) -> Self {
        Self(days.into_iter().fold(0, |acc, d| acc | 1 << d.num_days_from_monday()))
    }

    pub fn contains(self, day: Weekday) -> bool {
        self.0 & (1 << day.num_days_from_monday()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn days(self) -> impl Iterator<Item = Weekday> {
        DAY_NAMES.into_iter().map(|(_, d)| d).filter(move |d| self.contains(*d))
    }

    fn parse_day(s: &str) -> Result<Weekday, WindowError> {
        // accepts "sat", "Saturday", ...
        s.parse::<Weekday>().map_err(|_| WindowError::BadDay(s.to_owned()))
    }
}

impl Serialize for DaySet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(DAY_NAMES.iter().filter(|(_, d)| self.contains(*d)).map(|(n, _)| n))
    }
}

impl<'de> Deserialize<'de> for DaySet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        let days = names
            .iter()
            .map(|n| DaySet::parse_day(n))
            .collect::<Result<Vec<_>, _>>()
            .map_err(serde::de::Error::custom)?;
        Ok(DaySet::from_days(days))
    }
}

/// Restricts when a schedule may fire. Start inclusive, end exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ActivationWindow {
    start: TimeOfDay,
    end: TimeOfDay,
    days: DaySet,
    timezone: Tz,
}

impl ActivationWindow {
    pub fn new(start: TimeOfDay, end: TimeOfDay, days: DaySet, timezone: Tz) -> Result<Self, WindowError> {
        if start >= end {
            return Err(WindowError::Empty { start, end });
        }
        if days.is_empty() {
            return Err(WindowError::NoDays);
        }
        Ok(Self {
            start,
            end,
            days,
            timezone,
        })
    }

    pub fn start(&self) -> TimeOfDay {
        self.start
    }

    pub fn end(&self) -> TimeOfDay {
        self.end
    }

    pub fn days(&self) -> DaySet {
        self.days
    }

    pub fn timezone(&self) -> Tz {
        self.timezone
    }

    /// True iff `t`, seen in the window's zone, falls on an allowed weekday
    /// with `start <= time < end`.
    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        let local = t.with_timezone(&self.timezone);
        if !self.days.contains(local.weekday()) {
            return false;
        }
        // whole seconds suffice: both bounds sit on minute boundaries
        let secs = local.num_seconds_from_midnight();
        secs >= self.start.minutes() as u32 * 60 && secs < self.end.minutes() as u32 * 60
    }
}

/// Untrusted window description; the zone is optional and falls back to the
/// server's.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowDraft {
    pub start: TimeOfDay,
    pub end: TimeOfDay,
    pub days: DaySet,
    #[serde(default)]
    pub timezone: Option<Tz>,
}

impl WindowDraft {
    pub fn resolve(&self, default_zone: Tz) -> Result<ActivationWindow, WindowError> {
        ActivationWindow::new(self.start, self.end, self.days, self.timezone.unwrap_or(default_zone))
    }
}

impl<'de> Deserialize<'de> for ActivationWindow {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            start: TimeOfDay,
            end: TimeOfDay,
            days: DaySet,
            timezone: Tz,
        }
        let raw = Raw::deserialize(d)?;
        ActivationWindow::new(raw.start, raw.end, raw.days, raw.timezone).map_err(serde::de::Error::custom)
    }
}
