//! Time sources. Scheduling and timeout logic only ever read time through
//! [`Clock`], so simulations can drive the whole stack from a virtual clock.

use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Duration, TimeZone, Utc};

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Manually advanced clock with microsecond resolution. Clones share state.
#[derive(Debug, Clone)]
pub struct VirtualClock {
    micros: Arc<AtomicI64>,
}

impl VirtualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self {
            micros: Arc::new(AtomicI64::new(start.timestamp_micros())),
        }
    }

    /// Move to `t`. Time never goes backwards; earlier targets are ignored.
    pub fn advance_to(&self, t: DateTime<Utc>) {
        self.micros.fetch_max(t.timestamp_micros(), Ordering::SeqCst);
    }

    pub fn advance_by(&self, d: Duration) {
        let step = d.num_microseconds().unwrap_or(i64::MAX).max(0);
        self.micros.fetch_add(step, Ordering::SeqCst);
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> DateTime<Utc> {
        Utc.timestamp_micros(self.micros.load(Ordering::SeqCst))
            .single()
            .expect("virtual clock within chrono range")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_is_monotone_and_shared() {
        let start: DateTime<Utc> = "2024-06-01T00:00:00Z".parse().unwrap();
        let clock = VirtualClock::new(start);
        let other = clock.clone();
        clock.advance_by(Duration::seconds(90));
        assert_eq!(other.now(), start + Duration::seconds(90));
        clock.advance_to(start);
        assert_eq!(other.now(), start + Duration::seconds(90));
    }
}
