//! Domain types shared across the pipeline.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::onion::OnionAddress;

/// The four source families addresses are discovered from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    ThreatIntel,
    CodeRepo,
    WebGateway,
    TorRepository,
}

impl SourceKind {
    pub const ALL: [SourceKind; 4] = [
        SourceKind::ThreatIntel,
        SourceKind::CodeRepo,
        SourceKind::WebGateway,
        SourceKind::TorRepository,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::ThreatIntel => "threat_intel",
            SourceKind::CodeRepo => "code_repo",
            SourceKind::WebGateway => "web_gateway",
            SourceKind::TorRepository => "tor_repository",
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown source kind `{0}`")]
pub struct UnknownSourceKind(pub String);

impl FromStr for SourceKind {
    type Err = UnknownSourceKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SourceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| UnknownSourceKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiscoveryError {
    #[error("advertiser must not be empty")]
    EmptyAdvertiser,
    #[error("discovery timestamp {0} is in the future")]
    FutureTimestamp(DateTime<Utc>),
}

/// An address sighting, tied to the source and advertiser that published it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discovery {
    pub address: OnionAddress,
    pub source: SourceKind,
    pub advertiser: String,
    pub discovered_at: DateTime<Utc>,
}

impl Discovery {
    /// Validates the advertiser and timestamp against `now`; the timestamp is
    /// truncated to whole seconds.
    pub fn new(
        address: OnionAddress,
        source: SourceKind,
        advertiser: impl Into<String>,
        discovered_at: DateTime<Utc>,
        now: DateTime<Utc>,
    ) -> Result<Self, DiscoveryError> {
        let advertiser = advertiser.into();
        if advertiser.trim().is_empty() {
            return Err(DiscoveryError::EmptyAdvertiser);
        }
        let discovered_at = discovered_at.trunc_subsecs(0);
        if discovered_at > now {
            return Err(DiscoveryError::FutureTimestamp(discovered_at));
        }
        Ok(Self { address, source, advertiser, discovered_at })
    }
}

/// Outcome of a single page download.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchStatus {
    Ok,
    Timeout,
    Unreachable,
    BadEncoding,
    Empty,
}

impl FetchStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FetchStatus::Ok => "ok",
            FetchStatus::Timeout => "timeout",
            FetchStatus::Unreachable => "unreachable",
            FetchStatus::BadEncoding => "bad_encoding",
            FetchStatus::Empty => "empty",
        }
    }

    /// Timeouts and unreachable hosts are worth another attempt.
    pub fn is_transient(self) -> bool {
        matches!(self, FetchStatus::Timeout | FetchStatus::Unreachable)
    }
}

impl fmt::Display for FetchStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid date `{0}`: expected YYYY-MM-DD or YYYY/MM/DD")]
pub struct DayKeyError(pub String);

/// A calendar day, rendered `yyyy/mm/dd` in store keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DayKey(NaiveDate);

impl DayKey {
    pub fn new(date: NaiveDate) -> Self {
        Self(date)
    }

    pub fn from_ymd(year: i32, month: u32, day: u32) -> Result<Self, DayKeyError> {
        NaiveDate::from_ymd_opt(year, month, day)
            .map(Self)
            .ok_or_else(|| DayKeyError(format!("{year:04}-{month:02}-{day:02}")))
    }

    /// The UTC day containing `ts`.
    pub fn of(ts: DateTime<Utc>) -> Self {
        Self(ts.date_naive())
    }

    pub fn today() -> Self {
        Self::of(Utc::now())
    }

    pub fn date(self) -> NaiveDate {
        self.0
    }

    pub fn succ(self) -> Self {
        Self(self.0.succ_opt().expect("date in range"))
    }

    pub fn pred(self) -> Self {
        Self(self.0.pred_opt().expect("date in range"))
    }

    /// `yyyy-mm-dd`, the CLI form.
    pub fn iso(self) -> String {
        self.0.format("%Y-%m-%d").to_string()
    }

    /// Whole days from `self` to `other` (negative if `other` is earlier).
    pub fn days_until(self, other: DayKey) -> i64 {
        (other.0 - self.0).num_days()
    }

    /// End of the day as a UTC timestamp (last second).
    pub fn end_of_day(self) -> DateTime<Utc> {
        self.0.and_hms_opt(23, 59, 59).expect("valid time").and_utc()
    }
}

impl fmt::Display for DayKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}/{:02}/{:02}", self.0.year(), self.0.month(), self.0.day())
    }
}

impl FromStr for DayKey {
    type Err = DayKeyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split(['-', '/']).collect();
        if parts.len() != 3 || parts[0].len() != 4 || parts[1].len() != 2 || parts[2].len() != 2 {
            return Err(DayKeyError(s.to_string()));
        }
        let num = |p: &str| p.parse::<u32>().map_err(|_| DayKeyError(s.to_string()));
        let (y, m, d) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        NaiveDate::from_ymd_opt(y as i32, m, d)
            .map(Self)
            .ok_or_else(|| DayKeyError(s.to_string()))
    }
}

impl TryFrom<String> for DayKey {
    type Error = DayKeyError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<DayKey> for String {
    fn from(value: DayKey) -> Self {
        value.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn day_key_renders_zero_padded() {
        let d = DayKey::from_ymd(2023, 2, 7).unwrap();
        assert_eq!(d.to_string(), "2023/02/07");
        assert_eq!(d.iso(), "2023-02-07");
        assert_eq!("2023/02/07".parse::<DayKey>().unwrap(), d);
        assert_eq!("2023-02-07".parse::<DayKey>().unwrap(), d);
    }

    #[test]
    fn day_key_rejects_invalid_dates() {
        for bad in ["2023-02-30", "2023-13-01", "23-02-01", "2023-2-1", "tomorrow"] {
            assert!(bad.parse::<DayKey>().is_err(), "{bad}");
        }
        assert!("2024-02-29".parse::<DayKey>().is_ok());
    }

    #[test]
    fn source_kind_round_trips() {
        for k in SourceKind::ALL {
            assert_eq!(k.as_str().parse::<SourceKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.as_str()));
        }
    }

    #[test]
    fn discovery_validation() {
        let addr = OnionAddress::from_pubkey([7; 32]);
        let now = Utc.with_ymd_and_hms(2023, 1, 1, 12, 0, 0).unwrap();
        let later = now + chrono::Duration::seconds(5);
        assert_eq!(
            Discovery::new(addr.clone(), SourceKind::CodeRepo, " ", now, now),
            Err(DiscoveryError::EmptyAdvertiser)
        );
        assert!(matches!(
            Discovery::new(addr.clone(), SourceKind::CodeRepo, "x", later, now),
            Err(DiscoveryError::FutureTimestamp(_))
        ));
        let d = Discovery::new(
            addr,
            SourceKind::CodeRepo,
            "x",
            now - chrono::Duration::milliseconds(1500),
            now,
        )
        .unwrap();
        assert_eq!(d.discovered_at, now - chrono::Duration::seconds(2));
    }
}
