//! Five-field cron expressions.
//!
//! ```text
//! ┌ minute        0-59
//! │ ┌ hour        0-23
//! │ │ ┌ day       1-31
//! │ │ │ ┌ month   1-12
//! │ │ │ │ ┌ weekday 0-7 (0 and 7 are Sunday)
//! * * * * *
//! ```
//!
//! Each field is a comma list of `*`, `N`, `N-M`, `*/S`, `N/S` or `N-M/S`.
//! When both day fields are restricted a time matches if either does
//! (classic cron); otherwise both must match.

use std::fmt;
use std::str::FromStr;

use chrono::{
    DateTime, Datelike, Duration, DurationRound, NaiveDate, NaiveDateTime, Offset, TimeZone, Timelike, Utc,
};
use chrono_tz::Tz;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

const FIELD_NAMES: [&str; 5] = ["minute", "hour", "day-of-month", "month", "day-of-week"];
const FIELD_RANGES: [(u32, u32); 5] = [(0, 59), (0, 23), (1, 31), (1, 12), (0, 7)];

/// How far ahead to look before declaring an expression unsatisfiable.
/// Covers the 28-year weekday cycle of Feb 29.
const SEARCH_YEARS: i32 = 30;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cron field {field} ({}): {reason}", FIELD_NAMES.get(*.field).unwrap_or(&"count"))]
pub struct CronSyntaxError {
    /// Zero-based field index; 5 means the expression has the wrong field count.
    pub field: usize,
    pub reason: String,
}

#[derive(Clone, PartialEq, Eq)]
pub struct CronSpec {
    minutes: u64,
    hours: u32,
    days_of_month: u32,
    months: u16,
    days_of_week: u8,
    dom_restricted: bool,
    dow_restricted: bool,
    source: String,
}

impl fmt::Debug for CronSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CronSpec({:?})", self.source)
    }
}

impl fmt::Display for CronSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl FromStr for CronSpec {
    type Err = CronSyntaxError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_cron(s)
    }
}

impl Serialize for CronSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for CronSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_cron(&s).map_err(serde::de::Error::custom)
    }
}

fn parse_number(text: &str, field: usize) -> Result<u32, CronSyntaxError> {
    let (lo, hi) = FIELD_RANGES[field];
    let value: u32 = text.parse().map_err(|_| CronSyntaxError {
        field,
        reason: format!("{text:?} is not a number"),
    })?;
    if value < lo || value > hi {
        return Err(CronSyntaxError {
            field,
            reason: format!("{value} is outside {lo}-{hi}"),
        });
    }
    Ok(value)
}

/// Bitmask of the values a field accepts, plus whether it started with `*`.
fn parse_field(text: &str, field: usize) -> Result<(u64, bool), CronSyntaxError> {
    let (lo, hi) = FIELD_RANGES[field];
    let err = |reason: String| CronSyntaxError { field, reason };
    let mut mask = 0u64;
    for term in text.split(',') {
        if term.is_empty() {
            return Err(err("empty list element".into()));
        }
        let (range, step) = match term.split_once('/') {
            Some((r, s)) => {
                let step: u32 = s.parse().map_err(|_| err(format!("bad step {s:?}")))?;
                if step == 0 {
                    return Err(err("step must be positive".into()));
                }
                (r, Some(step))
            }
            None => (term, None),
        };
        let (start, end) = if range == "*" {
            (lo, hi)
        } else if let Some((a, b)) = range.split_once('-') {
            let (a, b) = (parse_number(a, field)?, parse_number(b, field)?);
            if a > b {
                return Err(err(format!("range {a}-{b} is reversed")));
            }
            (a, b)
        } else {
            let a = parse_number(range, field)?;
            // `N/S` runs to the end of the field
            (a, if step.is_some() { hi } else { a })
        };
        let step = step.unwrap_or(1);
        let mut v = start;
        while v <= end {
            mask |= 1 << v;
            v += step;
        }
    }
    Ok((mask, text.starts_with('*')))
}

/// Parse a five-field expression.
pub fn parse_cron(expr: &str) -> Result<CronSpec, CronSyntaxError> {
    let fields: Vec<&str> = expr.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(CronSyntaxError {
            field: fields.len().min(5),
            reason: format!("expected 5 fields, found {}", fields.len()),
        });
    }
    let (minutes, _) = parse_field(fields[0], 0)?;
    let (hours, _) = parse_field(fields[1], 1)?;
    let (dom, dom_star) = parse_field(fields[2], 2)?;
    let (months, _) = parse_field(fields[3], 3)?;
    let (mut dow, dow_star) = parse_field(fields[4], 4)?;
    if dow & (1 << 7) != 0 {
        dow = (dow | 1) & 0x7f;
    }
    Ok(CronSpec {
        minutes,
        hours: hours as u32,
        days_of_month: dom as u32,
        months: months as u16,
        days_of_week: dow as u8,
        dom_restricted: !dom_star,
        dow_restricted: !dow_star,
        source: fields.join(" "),
    })
}

impl CronSpec {
    fn day_matches(&self, date: NaiveDate) -> bool {
        let dom = self.days_of_month & (1 << date.day()) != 0;
        let dow = self.days_of_week & (1 << date.weekday().num_days_from_sunday()) != 0;
        match (self.dom_restricted, self.dow_restricted) {
            (true, true) => dom || dow,
            _ => dom && dow,
        }
    }

    /// Whether a local wall-clock minute matches.
    pub fn matches(&self, t: NaiveDateTime) -> bool {
        self.months & (1 << t.month()) != 0
            && self.day_matches(t.date())
            && self.hours & (1 << t.hour()) != 0
            && self.minutes & (1 << t.minute()) != 0
    }

    /// First local minute at or after `from` (rounded up to a minute) that
    /// matches.
    pub fn next_match_naive(&self, from: NaiveDateTime) -> Option<NaiveDateTime> {
        let mut t = from.with_nanosecond(0)?;
        if t.second() != 0 {
            t = t.with_second(0)? + Duration::minutes(1);
        }
        let limit_year = from.year() + SEARCH_YEARS;
        while t.year() <= limit_year {
            if self.months & (1 << t.month()) == 0 {
                let (y, m) = if t.month() == 12 { (t.year() + 1, 1) } else { (t.year(), t.month() + 1) };
                t = NaiveDate::from_ymd_opt(y, m, 1)?.and_hms_opt(0, 0, 0)?;
                continue;
            }
            if !self.day_matches(t.date()) {
                t = t.date().succ_opt()?.and_hms_opt(0, 0, 0)?;
                continue;
            }
            if self.hours & (1 << t.hour()) == 0 {
                t = t.with_minute(0)? + Duration::hours(1);
                continue;
            }
            let later = self.minutes >> t.minute();
            if later == 0 {
                t = t.with_minute(0)? + Duration::hours(1);
                continue;
            }
            return t.with_minute(t.minute() + later.trailing_zeros());
        }
        None
    }
}

fn offset_secs(zone: &Tz, t: DateTime<Utc>) -> i64 {
    zone.offset_from_utc_datetime(&t.naive_utc()).fix().local_minus_utc() as i64
}

/// Earliest instant in `(lo, hi]` whose offset differs from `off`, to the minute.
fn first_offset_change(zone: &Tz, mut lo: DateTime<Utc>, mut hi: DateTime<Utc>, off: i64) -> DateTime<Utc> {
    while hi - lo > Duration::minutes(1) {
        let mid = lo + (hi - lo) / 2;
        let mid = mid.duration_trunc(Duration::minutes(1)).unwrap_or(mid);
        if offset_secs(zone, mid) == off {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Earliest UTC minute strictly after `after` whose wall-clock time in `zone`
/// matches `spec`.
///
/// Wall-clock times skipped by a DST jump never fire; times repeated by a DST
/// fold fire on each occurrence. Offsets are assumed to change at most once
/// per day.
pub fn next_fire(spec: &CronSpec, after: DateTime<Utc>, zone: &Tz) -> Option<DateTime<Utc>> {
    let minute = Duration::minutes(1);
    let mut t = after.duration_trunc(minute).ok()? + minute;
    let limit = after + Duration::days(366 * SEARCH_YEARS as i64);
    while t < limit {
        let off = offset_secs(zone, t);
        let mut segment_end = t + Duration::days(1);
        if offset_secs(zone, segment_end) != off {
            segment_end = first_offset_change(zone, t, segment_end, off);
        }
        // wall clock runs monotonically inside [t, segment_end)
        let local = t.naive_utc() + Duration::seconds(off);
        let candidate = spec.next_match_naive(local)?;
        let utc = Utc.from_utc_datetime(&(candidate - Duration::seconds(off)));
        if utc < segment_end {
            return Some(utc);
        }
        t = segment_end;
    }
    None
}
