//! Brute-force reference for cron evaluation: interprets the expression text
//! term by term and scans every UTC minute.

use chrono::{DateTime, Datelike, Duration, DurationRound, NaiveDateTime, Timelike, Utc};
use chrono_tz::Tz;

#[derive(Debug, Clone)]
struct Term {
    start: u32,
    end: u32,
    step: u32,
}

#[derive(Debug, Clone)]
struct Field {
    terms: Vec<Term>,
    star: bool,
}

impl Field {
    fn parse(text: &str, lo: u32, hi: u32) -> Field {
        let terms = text
            .split(',')
            .map(|term| {
                let (range, step) = match term.find('/') {
                    Some(i) => (&term[..i], term[i + 1..].parse().unwrap()),
                    None => (term, 1),
                };
                let (start, end) = if range == "*" {
                    (lo, hi)
                } else if let Some(i) = range.find('-') {
                    (range[..i].parse().unwrap(), range[i + 1..].parse().unwrap())
                } else {
                    let n: u32 = range.parse().unwrap();
                    (n, if term.contains('/') { hi } else { n })
                };
                Term { start, end, step }
            })
            .collect();
        Field {
            terms,
            star: text.starts_with('*'),
        }
    }

    fn accepts(&self, v: u32) -> bool {
        self.terms
            .iter()
            .any(|t| v >= t.start && v <= t.end && (v - t.start).is_multiple_of(t.step))
    }
}

#[derive(Debug, Clone)]
pub struct OracleCron {
    minute: Field,
    hour: Field,
    dom: Field,
    month: Field,
    dow: Field,
}

impl OracleCron {
    pub fn new(expr: &str) -> Self {
        let f: Vec<&str> = expr.split(' ').filter(|s| !s.is_empty()).collect();
        assert_eq!(f.len(), 5, "{expr}");
        OracleCron {
            minute: Field::parse(f[0], 0, 59),
            hour: Field::parse(f[1], 0, 23),
            dom: Field::parse(f[2], 1, 31),
            month: Field::parse(f[3], 1, 12),
            dow: Field::parse(f[4], 0, 7),
        }
    }

    pub fn matches(&self, local: NaiveDateTime) -> bool {
        let wd = local.weekday().num_days_from_sunday();
        let dom_ok = self.dom.accepts(local.day());
        let dow_ok = self.dow.accepts(wd) || (wd == 0 && self.dow.accepts(7));
        let day_ok = if !self.dom.star && !self.dow.star {
            dom_ok || dow_ok
        } else {
            dom_ok && dow_ok
        };
        day_ok && self.month.accepts(local.month()) && self.hour.accepts(local.hour()) && self.minute.accepts(local.minute())
    }

    /// Every matching UTC minute in `(after, until)`.
    pub fn fires(&self, zone: &Tz, after: DateTime<Utc>, until: DateTime<Utc>) -> Vec<DateTime<Utc>> {
        let mut out = Vec::new();
        let mut t = after.duration_trunc(Duration::minutes(1)).unwrap() + Duration::minutes(1);
        while t < until {
            if self.matches(t.with_timezone(zone).naive_local()) {
                out.push(t);
            }
            t += Duration::minutes(1);
        }
        out
    }
}
