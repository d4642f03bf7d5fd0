//! UTC timestamps at millisecond resolution.
//!
//! Event records and tables carry times as whole milliseconds since the Unix
//! epoch. Detector internals work in `f64` epoch seconds and convert at the
//! boundary with [`UtcMillis::from_epoch_secs`].

use std::fmt;

use chrono::{DateTime, NaiveDateTime, Utc};

/// ISO-8601 layout used by every text output: `2006-01-01T00:00:00.000Z`.
pub const ISO_MILLIS: &str = "%Y-%m-%dT%H:%M:%S%.3fZ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct UtcMillis(pub i64);

#[derive(Debug, thiserror::Error)]
#[error("invalid timestamp `{0}`")]
pub struct TimeParseError(pub String);

impl UtcMillis {
    pub fn from_epoch_secs(secs: f64) -> Self {
        UtcMillis((secs * 1000.0).round() as i64)
    }

    pub fn epoch_secs(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn from_datetime(dt: DateTime<Utc>) -> Self {
        UtcMillis(dt.timestamp_millis())
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        DateTime::from_timestamp_millis(self.0).unwrap_or_default()
    }

    pub fn to_iso(self) -> String {
        self.to_datetime().format(ISO_MILLIS).to_string()
    }

    /// Parses `YYYY-MM-DDTHH:MM:SS[.fff]Z`.
    pub fn parse_iso(s: &str) -> Result<Self, TimeParseError> {
        let body = s
            .strip_suffix('Z')
            .ok_or_else(|| TimeParseError(s.to_string()))?;
        let naive = NaiveDateTime::parse_from_str(body, "%Y-%m-%dT%H:%M:%S%.f")
            .map_err(|_| TimeParseError(s.to_string()))?;
        Ok(UtcMillis(naive.and_utc().timestamp_millis()))
    }

    pub fn add_millis(self, ms: i64) -> Self {
        UtcMillis(self.0 + ms)
    }
}

impl fmt::Display for UtcMillis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_iso())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iso_round_trip() {
        let t = UtcMillis(1_136_073_600_123);
        assert_eq!(t.to_iso(), "2006-01-01T00:00:00.123Z");
        assert_eq!(UtcMillis::parse_iso(&t.to_iso()).unwrap(), t);
    }

    #[test]
    fn negative_millis_format() {
        let t = UtcMillis(-1);
        assert_eq!(t.to_iso(), "1969-12-31T23:59:59.999Z");
        assert_eq!(UtcMillis::parse_iso(&t.to_iso()).unwrap(), t);
    }

    #[test]
    fn rejects_missing_zone() {
        assert!(UtcMillis::parse_iso("2006-01-01T00:00:00.000").is_err());
    }
}
