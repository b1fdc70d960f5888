//! Day-granular calendar arithmetic.
//!
//! Every date in the store is a whole day. Internally a [`Day`] is the
//! number of days since 1970-01-01 so window arithmetic is integer-exact.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::TriageError;

/// Length of a "month" window in days.
pub const MONTH_DAYS: i32 = 30;
/// Length of the six-month label horizon in days.
pub const HALF_YEAR_DAYS: i32 = 183;
/// Length of a year in days.
pub const YEAR_DAYS: i32 = 365;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Day(pub i32);

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid epoch")
}

impl Day {
    pub fn from_date(date: NaiveDate) -> Self {
        Day((date - epoch()).num_days() as i32)
    }

    pub fn from_ymd(year: i32, month: u32, day: u32) -> Self {
        Day::from_date(NaiveDate::from_ymd_opt(year, month, day).expect("valid calendar date"))
    }

    pub fn to_date(self) -> NaiveDate {
        epoch() + chrono::Duration::days(self.0 as i64)
    }

    pub fn plus(self, days: i32) -> Day {
        Day(self.0 + days)
    }

    pub fn minus(self, days: i32) -> Day {
        Day(self.0 - days)
    }

    /// Whole days from `earlier` to `self`.
    pub fn days_since(self, earlier: Day) -> i32 {
        self.0 - earlier.0
    }
}

impl fmt::Display for Day {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_date().format("%Y-%m-%d"))
    }
}

impl FromStr for Day {
    type Err = TriageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
            .map(Day::from_date)
            .map_err(|e| TriageError::Data(format!("invalid date {s:?}: {e}")))
    }
}

impl Serialize for Day {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Day {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iso_round_trip() {
        let d: Day = "2023-03-01".parse().unwrap();
        assert_eq!(d.to_string(), "2023-03-01");
        assert_eq!(d.plus(365).to_string(), "2024-02-29");
    }

    #[test]
    fn rejects_garbage() {
        assert!("2023-13-01".parse::<Day>().is_err());
        assert!("yesterday".parse::<Day>().is_err());
    }
}
