//! Local wall-clock helpers for a single fixed-offset time zone per run.

use serde::{Deserialize, Serialize};

use crate::timeline::{SECONDS_PER_DAY, SECONDS_PER_HOUR};

/// Maps Unix seconds to local wall-clock time at a fixed UTC offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalClock {
    pub utc_offset_minutes: i32,
}

impl Default for LocalClock {
    /// Pacific Standard Time.
    fn default() -> Self {
        Self {
            utc_offset_minutes: -480,
        }
    }
}

impl LocalClock {
    pub fn new(utc_offset_minutes: i32) -> Self {
        Self { utc_offset_minutes }
    }

    fn offset_s(&self) -> f64 {
        f64::from(self.utc_offset_minutes) * 60.0
    }

    /// Unix time of local midnight starting the local day containing `t`.
    pub fn day_start(&self, t: f64) -> f64 {
        let local = t + self.offset_s();
        (local / SECONDS_PER_DAY).floor() * SECONDS_PER_DAY - self.offset_s()
    }

    /// Local day number (days since 1970-01-01 local).
    pub fn day_index(&self, t: f64) -> i64 {
        ((t + self.offset_s()) / SECONDS_PER_DAY).floor() as i64
    }

    /// Seconds since local midnight, in `[0, 86400)`.
    pub fn seconds_of_day(&self, t: f64) -> f64 {
        (t + self.offset_s()).rem_euclid(SECONDS_PER_DAY)
    }

    pub fn hour_of_day(&self, t: f64) -> f64 {
        self.seconds_of_day(t) / SECONDS_PER_HOUR
    }

    /// Unix time of `hour` (may exceed 24) on the local day starting at `day_start`.
    pub fn at(&self, day_start: f64, hour: f64) -> f64 {
        day_start + hour * SECONDS_PER_HOUR
    }

    /// `HH:MM:SS` of the local time at `t`, truncated to the second.
    pub fn hms(&self, t: f64) -> String {
        let s = self.seconds_of_day(t).floor() as i64;
        format!("{:02}:{:02}:{:02}", s / 3600, (s / 60) % 60, s % 60)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pacific_midnight_and_hours() {
        let clock = LocalClock::default();
        // 2023-01-02T01:30:00Z is 2023-01-01 17:30 PST.
        let t = 1_672_623_000.0;
        assert_eq!(clock.hms(t), "17:30:00");
        assert_eq!(clock.hms(clock.day_start(t)), "00:00:00");
        assert!((clock.hour_of_day(t) - 17.5).abs() < 1e-12);
        let next4 = clock.at(clock.day_start(t), 28.0);
        assert_eq!(clock.hms(next4), "04:00:00");
        assert_eq!(clock.day_index(next4), clock.day_index(t) + 1);
    }

    #[test]
    fn hms_truncates() {
        let clock = LocalClock::new(0);
        assert_eq!(clock.hms(20.0 * 3600.0 + 13.0 * 60.0 + 52.9), "20:13:52");
    }
}
