//! Time sources. Scenario runs use [`SimClock`] so that every timestamp is a
//! pure function of the script and seed.

use std::sync::atomic::{AtomicI64, Ordering};

use chrono::{DateTime, TimeZone, Utc};

pub type Timestamp = DateTime<Utc>;

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        // whole milliseconds keep the RFC 3339 rendering short and stable
        let now = Utc::now();
        Utc.timestamp_millis_opt(now.timestamp_millis()).unwrap()
    }
}

/// Manually advanced clock with one-second resolution.
#[derive(Debug)]
pub struct SimClock {
    secs: AtomicI64,
}

impl SimClock {
    pub fn new(start: Timestamp) -> Self {
        Self {
            secs: AtomicI64::new(start.timestamp()),
        }
    }

    pub fn set(&self, at: Timestamp) {
        self.secs.store(at.timestamp(), Ordering::SeqCst);
    }

    pub fn advance(&self, by: chrono::Duration) {
        self.secs.fetch_add(by.num_seconds(), Ordering::SeqCst);
    }
}

impl Clock for SimClock {
    fn now(&self) -> Timestamp {
        Utc.timestamp_opt(self.secs.load(Ordering::SeqCst), 0)
            .unwrap()
    }
}

/// Fixed epoch used by fixtures and scenario runs.
pub fn epoch() -> Timestamp {
    Utc.with_ymd_and_hms(2022, 1, 10, 9, 0, 0).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sim_clock_advances() {
        let clock = SimClock::new(epoch());
        clock.advance(chrono::Duration::minutes(3));
        assert_eq!(clock.now() - epoch(), chrono::Duration::minutes(3));
    }
}
