//! Downloading root pages of onion services through SOCKS5 proxies.

mod queue;
mod transport;
mod workers;

pub use queue::{FetchQueue, FetchTask, Lease, LeaseId};
pub use transport::Socks5Transport;
pub use workers::{run_download_workers, WorkerConfig, WorkerReport};

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::onion::OnionAddress;
use crate::types::FetchStatus;

/// Share of U+FFFD replacements above which a body is classified bad_encoding.
pub const MAX_REPLACEMENT_RATIO: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchResult {
    pub address: OnionAddress,
    pub status: FetchStatus,
    /// Raw bytes as received; present iff `status` is ok.
    pub body: Option<Vec<u8>>,
    pub fetched_at: DateTime<Utc>,
    pub proxy_id: String,
    /// The body needed lossy UTF-8 decoding (below the bad-encoding ceiling).
    pub lossy: bool,
}

/// Classification of a received body.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BodyClass {
    pub status: FetchStatus,
    pub lossy: bool,
}

/// Classifies a body received with a successful HTTP exchange.
pub fn classify_body(body: &[u8]) -> BodyClass {
    if body.iter().all(|b| b.is_ascii_whitespace()) {
        return BodyClass { status: FetchStatus::Empty, lossy: false };
    }
    let mut chars = 0usize;
    let mut replaced = 0usize;
    for chunk in body.utf8_chunks() {
        chars += chunk.valid().chars().count();
        if !chunk.invalid().is_empty() {
            replaced += 1;
        }
    }
    if replaced == 0 {
        return BodyClass { status: FetchStatus::Ok, lossy: false };
    }
    let ratio = replaced as f64 / (chars + replaced) as f64;
    if ratio > MAX_REPLACEMENT_RATIO {
        BodyClass { status: FetchStatus::BadEncoding, lossy: true }
    } else {
        // whitespace-only after decoding still counts as empty
        let text = String::from_utf8_lossy(body);
        if text.chars().all(|c| c.is_whitespace()) {
            BodyClass { status: FetchStatus::Empty, lossy: true }
        } else {
            BodyClass { status: FetchStatus::Ok, lossy: true }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ProxyEndpoint {
    pub host: String,
    pub port: u16,
}

impl ProxyEndpoint {
    pub fn new(host: impl Into<String>, port: u16) -> Self {
        Self { host: host.into(), port }
    }

    pub fn id(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ProxyEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.host, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid proxy endpoint `{0}`, expected host:port")]
pub struct BadProxyEndpoint(pub String);

impl FromStr for ProxyEndpoint {
    type Err = BadProxyEndpoint;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().trim_start_matches("socks5h://").trim_start_matches("socks5://");
        let (host, port) = s.rsplit_once(':').ok_or_else(|| BadProxyEndpoint(s.to_string()))?;
        let port = port.parse().map_err(|_| BadProxyEndpoint(s.to_string()))?;
        if host.is_empty() {
            return Err(BadProxyEndpoint(s.to_string()));
        }
        Ok(Self::new(host, port))
    }
}

impl TryFrom<String> for ProxyEndpoint {
    type Error = BadProxyEndpoint;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<ProxyEndpoint> for String {
    fn from(value: ProxyEndpoint) -> Self {
        value.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyState {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxyHealth {
    pub state: ProxyState,
    pub last_checked: DateTime<Utc>,
}

#[derive(Debug, Error)]
#[error("proxy pool needs at least one endpoint")]
pub struct EmptyProxyPool;

/// Configured SOCKS5 endpoints with their last observed health.
#[derive(Debug)]
pub struct ProxyPool {
    endpoints: Vec<ProxyEndpoint>,
    health: Mutex<HashMap<ProxyEndpoint, ProxyHealth>>,
}

impl ProxyPool {
    pub fn new(endpoints: Vec<ProxyEndpoint>) -> Result<Self, EmptyProxyPool> {
        if endpoints.is_empty() {
            return Err(EmptyProxyPool);
        }
        Ok(Self { endpoints, health: Mutex::new(HashMap::new()) })
    }

    pub fn endpoints(&self) -> &[ProxyEndpoint] {
        &self.endpoints
    }

    /// Round-robin assignment: worker `i` uses endpoint `i mod n`.
    pub fn for_worker(&self, worker: usize) -> &ProxyEndpoint {
        &self.endpoints[worker % self.endpoints.len()]
    }

    pub fn record(&self, endpoint: &ProxyEndpoint, state: ProxyState, at: DateTime<Utc>) {
        self.health.lock().insert(endpoint.clone(), ProxyHealth { state, last_checked: at });
    }

    pub fn health(&self, endpoint: &ProxyEndpoint) -> Option<ProxyHealth> {
        self.health.lock().get(endpoint).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("unreachable: {0}")]
    Unreachable(String),
    /// The proxy itself could not be reached.
    #[error("proxy failure: {0}")]
    Proxy(String),
}

/// One HTTP GET of an onion root page through a proxy.
pub trait PageTransport: Send + Sync {
    fn get_root(
        &self,
        address: &OnionAddress,
        proxy: &ProxyEndpoint,
        timeout: Duration,
    ) -> Result<Vec<u8>, TransportError>;
}

/// Fetches `http://<label>.onion/` once and classifies the outcome.
pub fn fetch_page(
    transport: &dyn PageTransport,
    address: &OnionAddress,
    proxy: &ProxyEndpoint,
    timeout: Duration,
) -> FetchResult {
    let outcome = transport.get_root(address, proxy, timeout);
    let fetched_at = Utc::now();
    let (status, body, lossy) = match outcome {
        Ok(bytes) => {
            let class = classify_body(&bytes);
            let body = (class.status == FetchStatus::Ok).then_some(bytes);
            (class.status, body, class.lossy)
        }
        Err(TransportError::Timeout) => (FetchStatus::Timeout, None, false),
        Err(TransportError::Unreachable(_)) | Err(TransportError::Proxy(_)) => {
            (FetchStatus::Unreachable, None, false)
        }
    };
    FetchResult { address: address.clone(), status, body, fetched_at, proxy_id: proxy.id(), lossy }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_whitespace_bodies() {
        assert_eq!(classify_body(b"").status, FetchStatus::Empty);
        assert_eq!(classify_body(b" \n\t\r\n").status, FetchStatus::Empty);
    }

    #[test]
    fn replacement_threshold() {
        // 95 valid ASCII chars + 5 invalid bytes -> 5% replacements: ok, flagged lossy
        let mut body = vec![b'a'; 95];
        body.extend([0xff, b' ', 0xfe, b' ', 0xff, b' ', 0xfe, b' ', 0xff]);
        let c = classify_body(&body);
        assert_eq!(c, BodyClass { status: FetchStatus::Ok, lossy: true });

        // 20 valid chars + 5 isolated invalid bytes -> 5/25 = 20%: bad encoding
        let mut body = vec![b'a'; 16];
        body.extend([0xff, b'b', 0xfe, b'b', 0xff, b'b', 0xfe, b'b', 0xff]);
        assert_eq!(classify_body(&body).status, FetchStatus::BadEncoding);

        // exactly 10% is still ok
        let mut body = vec![b'a'; 9];
        body.push(0xff);
        assert_eq!(classify_body(&body).status, FetchStatus::Ok);
    }

    #[test]
    fn valid_multibyte_text_is_clean() {
        let c = classify_body("Привет, мир — ünïcödé".as_bytes());
        assert_eq!(c, BodyClass { status: FetchStatus::Ok, lossy: false });
    }

    #[test]
    fn proxy_endpoint_parsing() {
        let p: ProxyEndpoint = "socks5h://127.0.0.1:9050".parse().unwrap();
        assert_eq!(p, ProxyEndpoint::new("127.0.0.1", 9050));
        assert!("nohost".parse::<ProxyEndpoint>().is_err());
        assert!(":9050".parse::<ProxyEndpoint>().is_err());
    }

    #[test]
    fn empty_pool_rejected_and_round_robin() {
        assert!(ProxyPool::new(vec![]).is_err());
        let pool = ProxyPool::new((0..5).map(|i| ProxyEndpoint::new("p", 9050 + i)).collect())
            .unwrap();
        let mut uses = HashMap::new();
        for w in 0..10 {
            *uses.entry(pool.for_worker(w).clone()).or_insert(0) += 1;
        }
        assert_eq!(uses.len(), 5);
        assert!(uses.values().all(|&n| n == 2));
    }
}
