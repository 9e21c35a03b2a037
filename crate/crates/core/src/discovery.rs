//! Source connectors: turn fetched feed, code-search, gateway-search and
//! repository pages into [`Discovery`] records and queue unseen addresses.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Duration;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use url::Url;

use crate::fetch::{FetchQueue, FetchTask, ProxyEndpoint, Socks5Transport};
use crate::onion::{extract_onion_addresses, parse_onion_address};
use crate::store::{Catalogs, StoreError};
use crate::types::{Discovery, SourceKind};

#[derive(Debug, Error)]
pub enum DiscoveryError {
    #[error("gateway list is empty")]
    EmptyGatewayList,
    #[error("invalid source config `{name}`: {reason}")]
    InvalidConfig { name: String, reason: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn default_true() -> bool {
    true
}

/// One scheduled connector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub kind: SourceKind,
    pub name: String,
    #[serde(default)]
    pub endpoints: Vec<String>,
    #[serde(with = "humantime_secs")]
    pub interval: Duration,
    /// Link hops from each seed (repositories only).
    #[serde(default = "default_depth")]
    pub crawl_depth: u32,
    /// Pause between requests (repositories only).
    #[serde(default = "default_delay", with = "humantime_secs")]
    pub request_delay: Duration,
    #[serde(default = "default_true")]
    pub enabled: bool,
}

fn default_depth() -> u32 {
    3
}

fn default_delay() -> Duration {
    Duration::from_millis(200)
}

/// Durations are written as fractional seconds in config files.
pub(crate) mod humantime_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        if !secs.is_finite() || secs < 0.0 {
            return Err(serde::de::Error::custom("duration must be a non-negative number of seconds"));
        }
        Ok(Duration::from_secs_f64(secs))
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<(), DiscoveryError> {
        let bad = |reason: &str| DiscoveryError::InvalidConfig {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        if self.name.trim().is_empty() {
            return Err(bad("name is empty"));
        }
        if self.interval.is_zero() {
            return Err(bad("interval must be positive"));
        }
        for ep in &self.endpoints {
            if Url::parse(ep).is_err() {
                return Err(bad(&format!("endpoint `{ep}` is not a URL")));
            }
        }
        Ok(())
    }
}

/// Result of one connector execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectorRun {
    pub source: SourceKind,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub discoveries: Vec<Discovery>,
    pub pages_visited: usize,
    /// (endpoint, message) for each failed page.
    pub errors: Vec<(String, String)>,
    /// URLs fetched successfully, in visit order.
    #[serde(default)]
    pub visited: Vec<String>,
}

/// Injected page source, so connectors run against fixtures in tests and
/// against HTTP in production.
pub trait PageFetcher: Send + Sync {
    fn fetch(&self, url: &str) -> Result<String, String>;
}

impl<F> PageFetcher for F
where
    F: Fn(&str) -> Result<String, String> + Send + Sync,
{
    fn fetch(&self, url: &str) -> Result<String, String> {
        self(url)
    }
}

/// First 16 hex characters of SHA-256 of the URL; fixture file stem.
pub fn url_hash(url: &str) -> String {
    let digest = Sha256::digest(url.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads pages from `fixtures/<source-name>/<url-hash>.html`.
#[derive(Debug, Clone)]
pub struct FixtureFetcher {
    dir: PathBuf,
}

impl FixtureFetcher {
    pub fn new(root: impl AsRef<Path>, source_name: &str) -> Self {
        Self { dir: root.as_ref().join(source_name) }
    }

    pub fn path_for(&self, url: &str) -> PathBuf {
        self.dir.join(format!("{}.html", url_hash(url)))
    }
}

impl PageFetcher for FixtureFetcher {
    fn fetch(&self, url: &str) -> Result<String, String> {
        let path = self.path_for(url);
        let bytes = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }
}

/// Live HTTP fetcher. Surface-web sources are fetched directly; with a proxy
/// configured, requests go through SOCKS5 so onion-hosted repositories work.
pub struct HttpFetcher {
    direct: reqwest::blocking::Client,
    proxied: Option<(Socks5Transport, ProxyEndpoint)>,
    timeout: Duration,
}

impl HttpFetcher {
    pub fn new(proxy: Option<ProxyEndpoint>, timeout: Duration) -> Result<Self, reqwest::Error> {
        let direct = reqwest::blocking::Client::builder().timeout(timeout).build()?;
        Ok(Self { direct, proxied: proxy.map(|p| (Socks5Transport::new(), p)), timeout })
    }
}

impl PageFetcher for HttpFetcher {
    fn fetch(&self, url: &str) -> Result<String, String> {
        let is_onion = Url::parse(url)
            .ok()
            .and_then(|u| u.host_str().map(|h| h.ends_with(".onion")))
            .unwrap_or(false);
        let bytes = match (&self.proxied, is_onion) {
            (Some((t, p)), _) => t.get_url(url, p, self.timeout).map_err(|e| e.to_string())?,
            (None, true) => return Err("onion URL requires a SOCKS proxy".into()),
            (None, false) => self
                .direct
                .get(url)
                .send()
                .and_then(|r| r.error_for_status())
                .and_then(|r| r.bytes())
                .map_err(|e| e.to_string())?
                .to_vec(),
        };
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }
}

fn gateway_host_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i-u)\b[a-z2-7]{56}(?:\.[a-z0-9-]+)+").expect("valid regex")
    })
}

/// Maps a gateway hostname such as `<label>.onion.ly` back to `<label>.onion`.
/// Returns `None` when no configured gateway matches or the label is invalid.
pub fn gateway_unproxy(hostname: &str, gateway_domains: &[String]) -> Option<String> {
    let host = hostname.trim().trim_end_matches('.').to_ascii_lowercase();
    gateway_domains.iter().find_map(|domain| {
        let domain = domain.trim().trim_start_matches('.').to_ascii_lowercase();
        let prefix = host.strip_suffix(&domain)?.strip_suffix('.')?;
        let label = prefix.rsplit('.').next()?;
        parse_onion_address(label).ok().map(|a| a.hostname())
    })
}

/// `site:<domain>` search queries, one per gateway, in input order.
pub fn build_dork_queries(gateway_domains: &[String]) -> Result<Vec<String>, DiscoveryError> {
    if gateway_domains.is_empty() {
        return Err(DiscoveryError::EmptyGatewayList);
    }
    Ok(gateway_domains.iter().map(|d| format!("site:{}", d.trim())).collect())
}

/// Extracts discoveries from one fetched page.
///
/// Gateway result pages are first rewritten so proxied hostnames read as
/// `<label>.onion`.
pub fn parse_source_document(
    kind: SourceKind,
    advertiser: &str,
    body: &str,
    gateway_domains: &[String],
    now: DateTime<Utc>,
) -> Vec<Discovery> {
    let rewritten;
    let text = if kind == SourceKind::WebGateway && !gateway_domains.is_empty() {
        rewritten = gateway_host_regex().replace_all(body, |caps: &regex::Captures<'_>| {
            gateway_unproxy(&caps[0], gateway_domains).unwrap_or_else(|| caps[0].to_string())
        });
        rewritten.as_ref()
    } else {
        body
    };
    let advertiser = if advertiser.trim().is_empty() { kind.as_str() } else { advertiser };
    extract_onion_addresses(text)
        .into_iter()
        .map(|address| Discovery {
            address,
            source: kind,
            advertiser: advertiser.to_string(),
            discovered_at: now.trunc_subsecs_compat(),
        })
        .collect()
}

trait TruncSecs {
    fn trunc_subsecs_compat(self) -> Self;
}

impl TruncSecs for DateTime<Utc> {
    fn trunc_subsecs_compat(self) -> Self {
        chrono::SubsecRound::trunc_subsecs(self, 0)
    }
}

fn href_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"(?i)href\s*=\s*(?:"([^"]*)"|'([^']*)'|([^\s>]+))"#).expect("valid regex"))
}

/// Same-host links of a page, resolved against `base`, fragments removed.
pub fn same_site_links(base: &Url, body: &str) -> Vec<Url> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for caps in href_regex().captures_iter(body) {
        let raw = caps.get(1).or(caps.get(2)).or(caps.get(3)).map(|m| m.as_str()).unwrap_or("");
        let Ok(mut link) = base.join(raw.trim()) else { continue };
        if !matches!(link.scheme(), "http" | "https") || link.host_str() != base.host_str() {
            continue;
        }
        link.set_fragment(None);
        if seen.insert(link.to_string()) {
            out.push(link);
        }
    }
    out
}

/// Breadth-first crawl of one repository site, up to `depth` hops from the seed.
///
/// Failed pages are recorded in the run's errors; their links are simply not
/// followed. A URL is fetched at most once per run.
pub fn crawl_repository(
    kind: SourceKind,
    seed: &str,
    depth: u32,
    delay: Duration,
    fetcher: &dyn PageFetcher,
) -> ConnectorRun {
    let started_at = Utc::now();
    let mut run = ConnectorRun {
        source: kind,
        started_at,
        finished_at: started_at,
        discoveries: Vec::new(),
        pages_visited: 0,
        errors: Vec::new(),
        visited: Vec::new(),
    };
    let seed_url = match Url::parse(seed) {
        Ok(u) => u,
        Err(e) => {
            run.errors.push((seed.to_string(), e.to_string()));
            run.finished_at = Utc::now();
            return run;
        }
    };
    let mut queued: HashSet<String> = HashSet::from([seed_url.to_string()]);
    let mut frontier = VecDeque::from([(seed_url, 0u32)]);
    let mut seen_addr = HashSet::new();
    let mut first = true;
    while let Some((url, hops)) = frontier.pop_front() {
        if !first && !delay.is_zero() {
            std::thread::sleep(delay);
        }
        first = false;
        match fetcher.fetch(url.as_str()) {
            Ok(body) => {
                run.pages_visited += 1;
                run.visited.push(url.to_string());
                for d in parse_source_document(kind, seed, &body, &[], Utc::now()) {
                    if seen_addr.insert(d.address.label().to_string()) {
                        run.discoveries.push(d);
                    }
                }
                if hops < depth {
                    for link in same_site_links(&url, &body) {
                        if queued.insert(link.to_string()) {
                            frontier.push_back((link, hops + 1));
                        }
                    }
                }
            }
            Err(msg) => run.errors.push((url.to_string(), msg)),
        }
    }
    run.finished_at = Utc::now();
    run
}

/// Executes one connector: a single page per endpoint for feeds and code
/// search, one results page per (endpoint template, dork query) for gateways,
/// and a bounded crawl per seed for repositories.
///
/// Gateway endpoints are URL templates containing `{query}`.
pub fn run_connector(
    cfg: &SourceConfig,
    gateway_domains: &[String],
    fetcher: &dyn PageFetcher,
) -> ConnectorRun {
    let started_at = Utc::now();
    let mut run = ConnectorRun {
        source: cfg.kind,
        started_at,
        finished_at: started_at,
        discoveries: Vec::new(),
        pages_visited: 0,
        errors: Vec::new(),
        visited: Vec::new(),
    };
    let mut seen = HashSet::new();
    let mut absorb = |run: &mut ConnectorRun, found: Vec<Discovery>| {
        for d in found {
            if seen.insert(d.address.label().to_string()) {
                run.discoveries.push(d);
            }
        }
    };
    match cfg.kind {
        SourceKind::TorRepository => {
            for seed in &cfg.endpoints {
                let sub = crawl_repository(cfg.kind, seed, cfg.crawl_depth, cfg.request_delay, fetcher);
                run.pages_visited += sub.pages_visited;
                run.errors.extend(sub.errors);
                run.visited.extend(sub.visited);
                absorb(&mut run, sub.discoveries);
            }
        }
        SourceKind::WebGateway => {
            let queries = match build_dork_queries(gateway_domains) {
                Ok(q) => q,
                Err(e) => {
                    run.errors.push((cfg.name.clone(), e.to_string()));
                    Vec::new()
                }
            };
            for template in &cfg.endpoints {
                for q in &queries {
                    let encoded: String = url::form_urlencoded::byte_serialize(q.as_bytes()).collect();
                    let url = template.replace("{query}", &encoded);
                    fetch_one(cfg, &url, gateway_domains, fetcher, &mut run, &mut absorb);
                    if !cfg.request_delay.is_zero() {
                        std::thread::sleep(cfg.request_delay);
                    }
                }
            }
        }
        SourceKind::ThreatIntel | SourceKind::CodeRepo => {
            for url in &cfg.endpoints {
                fetch_one(cfg, url, gateway_domains, fetcher, &mut run, &mut absorb);
            }
        }
    }
    run.finished_at = Utc::now().max(run.started_at);
    run
}

fn fetch_one(
    cfg: &SourceConfig,
    url: &str,
    gateway_domains: &[String],
    fetcher: &dyn PageFetcher,
    run: &mut ConnectorRun,
    absorb: &mut impl FnMut(&mut ConnectorRun, Vec<Discovery>),
) {
    match fetcher.fetch(url) {
        Ok(body) => {
            run.pages_visited += 1;
            run.visited.push(url.to_string());
            let found = parse_source_document(cfg.kind, url, &body, gateway_domains, Utc::now());
            absorb(run, found);
        }
        Err(msg) => run.errors.push((url.to_string(), msg)),
    }
}

/// Records every discovery and queues a fetch task for each address the
/// catalog had never seen. Returns the number of tasks queued.
pub fn enqueue_new(
    discoveries: &[Discovery],
    catalogs: &Catalogs,
    queue: &FetchQueue,
) -> Result<usize, DiscoveryError> {
    let mut enqueued = 0;
    for d in discoveries {
        let outcome = catalogs.record_discovery(d)?;
        if outcome.new_address {
            queue.push(FetchTask::new(d.address.clone(), d.discovered_at));
            enqueued += 1;
        }
    }
    Ok(enqueued)
}

/// Configs whose interval has elapsed since their last run. Never-run and
/// enabled configs are due immediately. `last_runs` is keyed by config name.
pub fn scheduler_tick<'a>(
    now: DateTime<Utc>,
    configs: &'a [SourceConfig],
    last_runs: &HashMap<String, DateTime<Utc>>,
) -> Vec<&'a SourceConfig> {
    configs
        .iter()
        .filter(|c| c.enabled)
        .filter(|c| match last_runs.get(&c.name) {
            None => true,
            Some(last) => {
                let elapsed = now.signed_duration_since(*last);
                elapsed.to_std().map(|e| e >= c.interval).unwrap_or(false)
            }
        })
        .collect()
}

/// Stateful scheduler that also guarantees a source never has two overlapping runs.
#[derive(Debug, Default)]
pub struct Scheduler {
    last_runs: HashMap<String, DateTime<Utc>>,
    running: HashSet<String>,
}

impl Scheduler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Due configs that are not already running; they are marked running.
    pub fn take_due<'a>(&mut self, now: DateTime<Utc>, configs: &'a [SourceConfig]) -> Vec<&'a SourceConfig> {
        let due: Vec<&SourceConfig> = scheduler_tick(now, configs, &self.last_runs)
            .into_iter()
            .filter(|c| !self.running.contains(&c.name))
            .collect();
        for c in &due {
            self.running.insert(c.name.clone());
        }
        due
    }

    /// Marks a run finished; its interval counts from `started_at`.
    pub fn complete(&mut self, name: &str, started_at: DateTime<Utc>) {
        self.running.remove(name);
        self.last_runs.insert(name.to_string(), started_at);
    }

    pub fn last_runs(&self) -> &HashMap<String, DateTime<Utc>> {
        &self.last_runs
    }
}

/// Discovery counts per source for reporting.
pub fn count_by_source(runs: &[ConnectorRun]) -> BTreeMap<SourceKind, usize> {
    let mut out = BTreeMap::new();
    for r in runs {
        *out.entry(r.source).or_default() += r.discoveries.len();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::onion::OnionAddress;
    use chrono::TimeZone;

    fn label(seed: u8) -> String {
        OnionAddress::from_pubkey([seed; 32]).label().to_string()
    }

    fn corrupted(seed: u8) -> String {
        let mut l = label(seed);
        let c = if l.as_bytes()[20] == b'a' { "b" } else { "a" };
        l.replace_range(20..21, c);
        l
    }

    fn now() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2023, 2, 7, 12, 0, 0).unwrap()
    }

    #[test]
    fn threat_feed_two_addresses() {
        let body = format!("{}.onion\n{}.onion\n{}.onion\n", label(1), label(2), label(1));
        let found = parse_source_document(SourceKind::ThreatIntel, "feedX", &body, &[], now());
        assert_eq!(found.len(), 2);
        assert!(found.iter().all(|d| d.source == SourceKind::ThreatIntel && d.advertiser == "feedX"));
    }

    #[test]
    fn code_literal_address() {
        let body = format!("const MIRROR: &str = \"http://{}.onion/api\";", label(3));
        let found = parse_source_document(SourceKind::CodeRepo, "searchY", &body, &[], now());
        assert_eq!(found.len(), 1);
    }

    #[test]
    fn checksum_invalid_only_yields_nothing() {
        let body = format!("{}.onion", corrupted(4));
        assert!(parse_source_document(SourceKind::ThreatIntel, "feedX", &body, &[], now()).is_empty());
    }

    #[test]
    fn gateway_unproxy_cases() {
        let gws = vec!["onion.ly".to_string(), "onion.ws".to_string(), "tor2web.org".to_string()];
        assert_eq!(
            gateway_unproxy(&format!("{}.onion.ly", label(5)), &gws),
            Some(format!("{}.onion", label(5)))
        );
        assert_eq!(gateway_unproxy("example.com", &gws), None);
        assert_eq!(gateway_unproxy(&format!("{}.onion.ws", corrupted(5)), &gws), None);
        assert_eq!(
            gateway_unproxy(&format!("{}.TOR2WEB.ORG", label(6).to_uppercase()), &gws),
            Some(format!("{}.onion", label(6)))
        );
    }

    #[test]
    fn gateway_pages_are_rewritten_before_extraction() {
        let gws = vec!["tor2web.org".to_string()];
        let body = format!("<a href=\"https://{}.tor2web.org/page\">", label(7));
        let found = parse_source_document(SourceKind::WebGateway, "ddg", &body, &gws, now());
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].address.label(), label(7));
        // other kinds do not unproxy
        assert!(parse_source_document(SourceKind::ThreatIntel, "x", &body, &gws, now()).is_empty());
    }

    #[test]
    fn dork_queries() {
        assert_eq!(build_dork_queries(&["tor2web.org".into()]).unwrap(), ["site:tor2web.org"]);
        assert!(matches!(build_dork_queries(&[]), Err(DiscoveryError::EmptyGatewayList)));
    }

    fn chain_site() -> HashMap<String, Result<String, String>> {
        let mut pages = HashMap::new();
        pages.insert(
            "http://repo.test/".to_string(),
            Ok(format!("<a href=\"/a\">A</a> <a href=\"http://other.test/x\">ext</a> {}.onion", label(10))),
        );
        pages.insert("http://repo.test/a".to_string(), Ok(format!("<a href='b'>B</a> {}.onion", label(11))));
        pages.insert("http://repo.test/b".to_string(), Ok("<a href=/c>C</a> <a href=\"/a#top\">A</a>".to_string()));
        pages.insert("http://repo.test/c".to_string(), Ok(format!("{}.onion", label(12))));
        pages
    }

    fn fetcher(pages: HashMap<String, Result<String, String>>) -> impl PageFetcher {
        move |url: &str| pages.get(url).cloned().unwrap_or_else(|| Err(format!("404 {url}")))
    }

    #[test]
    fn crawl_depth_bounds() {
        let f = fetcher(chain_site());
        let run = crawl_repository(SourceKind::TorRepository, "http://repo.test/", 3, Duration::ZERO, &f);
        assert_eq!(run.pages_visited, 4);
        assert_eq!(run.discoveries.len(), 3);
        assert!(run.errors.is_empty());

        let run = crawl_repository(SourceKind::TorRepository, "http://repo.test/", 0, Duration::ZERO, &f);
        assert_eq!(run.pages_visited, 1);
    }

    #[test]
    fn crawl_isolates_failures() {
        let mut pages = chain_site();
        pages.insert("http://repo.test/b".to_string(), Err("boom".to_string()));
        let f = fetcher(pages);
        let run = crawl_repository(SourceKind::TorRepository, "http://repo.test/", 3, Duration::ZERO, &f);
        assert_eq!(run.errors.len(), 1);
        assert_eq!(run.pages_visited, 2);
        assert!(!run.visited.iter().any(|u| u.ends_with("/c")));
    }

    #[test]
    fn crawl_waits_between_requests() {
        let f = fetcher(chain_site());
        let t0 = std::time::Instant::now();
        crawl_repository(SourceKind::TorRepository, "http://repo.test/", 3, Duration::from_millis(20), &f);
        assert!(t0.elapsed() >= Duration::from_millis(60));
    }

    fn disc(seed: u8, source: SourceKind) -> Discovery {
        Discovery {
            address: OnionAddress::from_pubkey([seed; 32]),
            source,
            advertiser: "a".into(),
            discovered_at: now(),
        }
    }

    #[test]
    fn enqueue_new_is_idempotent() {
        let cat = Catalogs::in_memory();
        let q = FetchQueue::default();
        let batch: Vec<_> = (1..=3).map(|s| disc(s, SourceKind::ThreatIntel)).collect();
        assert_eq!(enqueue_new(&batch, &cat, &q).unwrap(), 3);
        assert_eq!(cat.address_count(), 3);
        assert_eq!(enqueue_new(&batch, &cat, &q).unwrap(), 0);
        assert_eq!(q.outstanding(), 3);

        let both = vec![disc(9, SourceKind::CodeRepo), disc(9, SourceKind::WebGateway)];
        assert_eq!(enqueue_new(&both, &cat, &q).unwrap(), 1);
        let row = cat.download_row(&both[0].address).unwrap();
        assert!(row.found_in_code_repo && row.found_in_gateway);
    }

    fn cfg(name: &str, kind: SourceKind, hours: u64) -> SourceConfig {
        SourceConfig {
            kind,
            name: name.into(),
            endpoints: vec![],
            interval: Duration::from_secs(hours * 3600),
            crawl_depth: 3,
            request_delay: Duration::from_millis(200),
            enabled: true,
        }
    }

    #[test]
    fn scheduler_intervals() {
        let configs = vec![
            cfg("threat-intel", SourceKind::ThreatIntel, 6),
            cfg("tor-repos", SourceKind::TorRepository, 12),
            cfg("code-repos", SourceKind::CodeRepo, 6),
        ];
        let mut last = HashMap::new();
        last.insert("threat-intel".to_string(), now() - chrono::Duration::hours(7));
        last.insert("tor-repos".to_string(), now() - chrono::Duration::hours(6));
        let due: Vec<&str> = scheduler_tick(now(), &configs, &last).iter().map(|c| c.name.as_str()).collect();
        assert_eq!(due, ["threat-intel", "code-repos"]);
    }

    #[test]
    fn scheduler_never_double_dispatches() {
        let configs = vec![cfg("threat-intel", SourceKind::ThreatIntel, 6)];
        let mut s = Scheduler::new();
        assert_eq!(s.take_due(now(), &configs).len(), 1);
        assert!(s.take_due(now() + chrono::Duration::hours(7), &configs).is_empty());
        s.complete("threat-intel", now());
        assert!(s.take_due(now() + chrono::Duration::hours(5), &configs).is_empty());
        assert_eq!(s.take_due(now() + chrono::Duration::hours(6), &configs).len(), 1);
    }

    #[test]
    fn gateway_connector_queries_each_domain() {
        let gws: Vec<String> = vec!["onion.ly".into(), "tor2web.org".into()];
        let mut c = cfg("gateways", SourceKind::WebGateway, 6);
        c.endpoints = vec!["https://search.test/html?q={query}".into()];
        c.request_delay = Duration::ZERO;
        let l = label(20);
        let f = move |url: &str| -> Result<String, String> {
            if url.contains("onion.ly") {
                Ok(format!("result: https://{l}.onion.ly/"))
            } else {
                Ok("no results".into())
            }
        };
        let run = run_connector(&c, &gws, &f);
        assert_eq!(run.pages_visited, 2);
        assert_eq!(run.discoveries.len(), 1);
        assert!(run.visited[0].contains("site%3Aonion.ly"));
    }

    #[test]
    fn fixture_fetcher_layout() {
        let dir = tempfile::tempdir().unwrap();
        let ff = FixtureFetcher::new(dir.path(), "feedX");
        let url = "https://feeds.test/list.txt";
        std::fs::create_dir_all(dir.path().join("feedX")).unwrap();
        std::fs::write(ff.path_for(url), format!("{}.onion", label(30))).unwrap();
        assert_eq!(url_hash(url).len(), 16);
        assert!(ff.fetch(url).unwrap().contains(&label(30)));
        assert!(ff.fetch("https://feeds.test/missing").is_err());
    }
}
