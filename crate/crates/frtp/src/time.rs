//! Timestamp handling and bucketed time grids.
//!
//! Input timestamps carry no zone suffix and are interpreted as local (JST)
//! wall-clock time. Internally everything is epoch minutes (i64) or epoch
//! seconds (f64 for sub-minute passage times) relative to that wall clock.

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::FrtpError;

pub const MINUTES_PER_DAY: i64 = 1440;

/// Wall-clock timestamp stored as whole minutes since the Unix epoch.
pub type EpochMinutes = i64;

/// Sub-minute timestamp in seconds since the Unix epoch.
pub type EpochSeconds = f64;

const TIMESTAMP_FMT: &str = "%Y-%m-%d %H:%M:%S";
const DATE_FMT: &str = "%Y-%m-%d";

pub fn parse_timestamp(s: &str) -> Result<EpochMinutes, FrtpError> {
    let dt = NaiveDateTime::parse_from_str(s.trim(), TIMESTAMP_FMT)
        .map_err(|_| FrtpError::BadTimestamp(s.to_string()))?;
    Ok(dt.and_utc().timestamp() / 60)
}

pub fn parse_date(s: &str) -> Result<NaiveDate, FrtpError> {
    NaiveDate::parse_from_str(s.trim(), DATE_FMT).map_err(|_| FrtpError::BadTimestamp(s.to_string()))
}

pub fn format_timestamp(minutes: EpochMinutes) -> String {
    to_datetime(minutes).format(TIMESTAMP_FMT).to_string()
}

pub fn to_datetime(minutes: EpochMinutes) -> NaiveDateTime {
    chrono::DateTime::from_timestamp(minutes * 60, 0)
        .expect("epoch minutes in range")
        .naive_utc()
}

/// Day-of-week with Monday = 0 through Sunday = 6.
pub fn day_of_week(minutes: EpochMinutes) -> u32 {
    to_datetime(minutes).weekday().num_days_from_monday()
}

pub fn hour_of_day(minutes: EpochMinutes) -> u32 {
    to_datetime(minutes).hour()
}

pub fn date_of(minutes: EpochMinutes) -> NaiveDate {
    to_datetime(minutes).date()
}

/// Regular bucket grid: `len` buckets of `step_minutes`, starting at `start`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start: EpochMinutes,
    pub step_minutes: u32,
    pub len: usize,
}

impl TimeGrid {
    pub fn new(start: EpochMinutes, step_minutes: u32, len: usize) -> Result<Self, FrtpError> {
        if step_minutes == 0 || 60 % step_minutes != 0 {
            return Err(FrtpError::BadGrid(format!(
                "step_minutes must divide 60, got {step_minutes}"
            )));
        }
        if len == 0 {
            return Err(FrtpError::BadGrid("grid len must be positive".into()));
        }
        Ok(TimeGrid { start, step_minutes, len })
    }

    pub fn end(&self) -> EpochMinutes {
        self.start + self.len as i64 * self.step_minutes as i64
    }

    /// Bucket index of `t`, or None when `t` falls outside the grid span.
    pub fn bucket(&self, t: EpochMinutes) -> Option<usize> {
        if t < self.start || t >= self.end() {
            return None;
        }
        Some(((t - self.start) / self.step_minutes as i64) as usize)
    }

    /// Start time of bucket `i`.
    pub fn bucket_start(&self, i: usize) -> EpochMinutes {
        self.start + i as i64 * self.step_minutes as i64
    }

    pub fn is_aligned(&self, t: EpochMinutes) -> bool {
        (t - self.start).rem_euclid(self.step_minutes as i64) == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format_roundtrip() {
        let t = parse_timestamp("2022-05-03 08:15:00").unwrap();
        assert_eq!(format_timestamp(t), "2022-05-03 08:15:00");
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_timestamp("not-a-time").is_err());
        assert!(parse_timestamp("2022-13-40 99:99:99").is_err());
    }

    #[test]
    fn weekday_index_is_monday_zero() {
        // 2022-05-14 is a Saturday.
        let t = parse_timestamp("2022-05-14 00:00:00").unwrap();
        assert_eq!(day_of_week(t), 5);
        // 2022-05-09 is a Monday.
        let t = parse_timestamp("2022-05-09 12:00:00").unwrap();
        assert_eq!(day_of_week(t), 0);
    }

    #[test]
    fn grid_bucketing() {
        let start = parse_timestamp("2022-05-01 00:00:00").unwrap();
        let grid = TimeGrid::new(start, 5, 288).unwrap();
        assert_eq!(grid.bucket(start), Some(0));
        assert_eq!(grid.bucket(start + 4), Some(0));
        assert_eq!(grid.bucket(start + 5), Some(1));
        assert_eq!(grid.bucket(start - 1), None);
        assert_eq!(grid.bucket(grid.end()), None);
        assert_eq!(grid.bucket_start(287), grid.end() - 5);
    }

    #[test]
    fn grid_rejects_bad_step() {
        let start = 0;
        assert!(TimeGrid::new(start, 7, 10).is_err());
        assert!(TimeGrid::new(start, 0, 10).is_err());
        assert!(TimeGrid::new(start, 5, 0).is_err());
    }
}
