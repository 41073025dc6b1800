//! Injectable time source.

use std::sync::Mutex;

use chrono::{DateTime, DurationRound, TimeDelta, TimeZone, Utc};

pub type Instant = DateTime<Utc>;

pub trait Clock: Send + Sync {
    fn now(&self) -> Instant;
}

/// Wall clock truncated to millisecond precision.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Instant {
        truncate_ms(Utc::now())
    }
}

/// A clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock {
    now: Mutex<Instant>,
}

impl ManualClock {
    pub fn new(start: Instant) -> Self {
        ManualClock {
            now: Mutex::new(truncate_ms(start)),
        }
    }

    /// 2025-01-06T09:00:00Z, the start time used by scripted runs.
    pub fn fixed() -> Self {
        Self::new(default_epoch())
    }

    pub fn advance(&self, by: TimeDelta) {
        let mut now = self.now.lock().unwrap_or_else(|e| e.into_inner());
        *now = truncate_ms(*now + by);
    }

    pub fn advance_secs_f64(&self, secs: f64) {
        self.advance(TimeDelta::milliseconds((secs * 1000.0).round() as i64));
    }

    pub fn set(&self, to: Instant) {
        *self.now.lock().unwrap_or_else(|e| e.into_inner()) = truncate_ms(to);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Instant {
        *self.now.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl<T: Clock + ?Sized> Clock for std::sync::Arc<T> {
    fn now(&self) -> Instant {
        (**self).now()
    }
}

pub fn default_epoch() -> Instant {
    Utc.with_ymd_and_hms(2025, 1, 6, 9, 0, 0).unwrap()
}

pub fn truncate_ms(t: Instant) -> Instant {
    t.duration_trunc(TimeDelta::milliseconds(1)).unwrap_or(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manual_clock_advances() {
        let c = ManualClock::fixed();
        let t0 = c.now();
        c.advance_secs_f64(59.9996);
        assert_eq!((c.now() - t0).num_milliseconds(), 60_000);
        c.advance(TimeDelta::seconds(1));
        assert_eq!((c.now() - t0).num_milliseconds(), 61_000);
    }

    #[test]
    fn system_clock_has_ms_precision() {
        let t = SystemClock.now();
        assert_eq!(t.timestamp_subsec_nanos() % 1_000_000, 0);
    }
}
