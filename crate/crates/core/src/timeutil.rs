//! Hour-resolution UTC timestamps.
//!
//! All series in the toolkit live on an hourly UTC grid, so instants are
//! stored as whole hours since the Unix epoch. Calendar math goes through
//! chrono.

use chrono::{DateTime, Datelike, NaiveDateTime, TimeZone, Timelike, Utc};
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// A UTC instant on the hourly grid (whole hours since the Unix epoch).
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UtcHour(pub i64);

impl UtcHour {
    pub fn from_ymdh(year: i32, month: u32, day: u32, hour: u32) -> Result<Self> {
        let dt = Utc
            .with_ymd_and_hms(year, month, day, hour, 0, 0)
            .single()
            .ok_or_else(|| {
                Error::data(format!(
                    "invalid UTC instant {year:04}-{month:02}-{day:02}T{hour:02}"
                ))
            })?;
        Ok(UtcHour(dt.timestamp() / 3600))
    }

    /// Parses an ISO-8601 UTC timestamp. Accepts `2015-01-02T03:00:00Z`,
    /// `2015-01-02T03:00:00`, `2015-01-02T03:00` and `2015-01-02T03`;
    /// sub-hour components must be zero.
    pub fn parse(s: &str) -> Result<Self> {
        let trimmed = s.trim().trim_end_matches('Z');
        // hour-only form: pad to a full time so one parser handles all shapes
        let padded;
        let candidate = match trimmed.len() {
            13 => {
                padded = format!("{trimmed}:00:00");
                padded.as_str()
            }
            16 => {
                padded = format!("{trimmed}:00");
                padded.as_str()
            }
            _ => trimmed,
        };
        let naive = NaiveDateTime::parse_from_str(candidate, "%Y-%m-%dT%H:%M:%S")
            .map_err(|e| Error::data(format!("unparseable timestamp `{s}`: {e}")))?;
        if naive.minute() != 0 || naive.second() != 0 {
            return Err(Error::data(format!(
                "timestamp `{s}` is not on the hourly grid"
            )));
        }
        let dt = Utc.from_utc_datetime(&naive);
        Ok(UtcHour(dt.timestamp() / 3600))
    }

    pub fn datetime(self) -> DateTime<Utc> {
        Utc.timestamp_opt(self.0 * 3600, 0).unwrap()
    }

    /// Hour of day, 0..=23.
    pub fn hour_of_day(self) -> u32 {
        self.datetime().hour()
    }

    /// Day of year, 1..=366.
    pub fn day_of_year(self) -> u32 {
        self.datetime().ordinal()
    }

    /// Month, 1..=12.
    pub fn month(self) -> u32 {
        self.datetime().month()
    }

    pub fn year(self) -> i32 {
        self.datetime().year()
    }

    pub fn plus_hours(self, hours: i64) -> Self {
        UtcHour(self.0 + hours)
    }
}

impl fmt::Display for UtcHour {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.datetime().format("%Y-%m-%dT%H:%M:%SZ"))
    }
}

impl fmt::Debug for UtcHour {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "UtcHour({self})")
    }
}
