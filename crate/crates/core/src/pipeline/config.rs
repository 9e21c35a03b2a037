use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::analytics::DetectorConfig;
use crate::dedup::{DedupConfig, BANDS, DEFAULT_SEED, DEFAULT_SHINGLE_K, DEFAULT_THRESHOLD, NUM_PERM, ROWS_PER_BAND};
use crate::discovery::SourceConfig;
use crate::fetch::{ProxyEndpoint, WorkerConfig, MAX_REPLACEMENT_RATIO};
use crate::langid::{CONFIDENT_WORDS, DEFAULT_DOC_LEN, DEFAULT_PROFILE_LEN};
use crate::textprep::MoneyConfig;
use crate::topics::{TopicsConfig, FALLBACK_DIM};

pub const CONFIG_ENV: &str = "ONIONSCOPE_CONFIG";

/// The configuration file shipped with the crate.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../../config/onionscope.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreSection {
    /// Root directory of the object store.
    pub root: PathBuf,
    /// Catalog log; relative paths resolve against `root`.
    pub catalog: PathBuf,
    /// Batch lock file; relative paths resolve against `root`.
    pub lock_file: PathBuf,
}

impl Default for StoreSection {
    fn default() -> Self {
        Self { root: "data".into(), catalog: "catalog.jsonl".into(), lock_file: "batch.lock".into() }
    }
}

impl StoreSection {
    pub fn catalog_path(&self) -> PathBuf {
        self.root.join(&self.catalog)
    }

    pub fn lock_path(&self) -> PathBuf {
        self.root.join(&self.lock_file)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoverySection {
    pub gateway_domains: Vec<String>,
    /// Serve connector pages from `fixtures/<source-name>/<url-hash>.html` instead of the network.
    pub fixture_dir: Option<PathBuf>,
    /// SOCKS proxy for clearnet source pages; direct when absent.
    pub proxy: Option<String>,
    pub http_timeout_secs: f64,
    pub sources: Vec<SourceConfig>,
}

impl Default for DiscoverySection {
    fn default() -> Self {
        Self { gateway_domains: Vec::new(), fixture_dir: None, proxy: None, http_timeout_secs: 30.0, sources: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FetchSection {
    pub workers: usize,
    pub proxies: Vec<String>,
    pub timeout_secs: f64,
    pub max_attempts: u32,
    pub backoff_secs: f64,
    pub visibility_timeout_secs: f64,
    pub max_replacement_ratio: f64,
}

impl Default for FetchSection {
    fn default() -> Self {
        Self {
            workers: 10,
            proxies: vec!["127.0.0.1:9050".into()],
            timeout_secs: 60.0,
            max_attempts: 3,
            backoff_secs: 30.0,
            visibility_timeout_secs: 300.0,
            max_replacement_ratio: MAX_REPLACEMENT_RATIO,
        }
    }
}

impl FetchSection {
    pub fn worker_config(&self) -> WorkerConfig {
        WorkerConfig {
            workers: self.workers,
            timeout: Duration::from_secs_f64(self.timeout_secs),
            max_attempts: self.max_attempts,
            backoff: Duration::from_secs_f64(self.backoff_secs),
            ..WorkerConfig::default()
        }
    }

    pub fn proxy_endpoints(&self) -> Result<Vec<ProxyEndpoint>, PipelineError> {
        self.proxies.iter().map(|p| parse_endpoint(p)).collect()
    }
}

pub fn parse_endpoint(s: &str) -> Result<ProxyEndpoint, PipelineError> {
    let bad = || PipelineError::Config(format!("proxy `{s}` is not host:port"));
    let (host, port) = s.rsplit_once(':').ok_or_else(bad)?;
    if host.is_empty() {
        return Err(bad());
    }
    Ok(ProxyEndpoint::new(host, port.parse().map_err(|_| bad())?))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextprepSection {
    pub money: MoneyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupSection {
    pub shingle_k: usize,
    pub seed: u64,
    pub threshold: f64,
    pub num_perm: usize,
    pub bands: usize,
    pub rows_per_band: usize,
}

impl Default for DedupSection {
    fn default() -> Self {
        Self {
            shingle_k: DEFAULT_SHINGLE_K,
            seed: DEFAULT_SEED,
            threshold: DEFAULT_THRESHOLD,
            num_perm: NUM_PERM,
            bands: BANDS,
            rows_per_band: ROWS_PER_BAND,
        }
    }
}

impl DedupSection {
    pub fn dedup_config(&self) -> DedupConfig {
        DedupConfig { shingle_k: self.shingle_k, seed: self.seed, threshold: self.threshold }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LangidSection {
    /// Profile file; the bundled profiles when absent.
    pub profiles: Option<PathBuf>,
    pub profile_len: usize,
    pub doc_len: usize,
    pub confident_words: usize,
}

impl Default for LangidSection {
    fn default() -> Self {
        Self { profiles: None, profile_len: DEFAULT_PROFILE_LEN, doc_len: DEFAULT_DOC_LEN, confident_words: CONFIDENT_WORDS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    Hashing,
    /// Child process speaking the embedding protocol on stdio.
    SidecarStdio,
    SidecarTcp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderSection {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub command: Vec<String>,
    pub address: String,
    pub batch_size: usize,
    pub timeout_secs: f64,
    /// Use the hashing embedder when the sidecar cannot be reached.
    pub fallback: bool,
}

impl Default for EmbedderSection {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Hashing,
            dim: FALLBACK_DIM,
            command: vec!["python3".into(), "-m".into(), "onionscope_embed".into()],
            address: "127.0.0.1:7070".into(),
            batch_size: 64,
            timeout_secs: 120.0,
            fallback: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopicsSection {
    #[serde(flatten)]
    pub model: TopicsConfig,
    /// Only documents in this language are clustered.
    pub language: String,
    /// Label map file; the shipped map when absent.
    pub label_map: Option<PathBuf>,
    pub embedder: EmbedderSection,
}

impl Default for TopicsSection {
    fn default() -> Self {
        Self { model: TopicsConfig::default(), language: "en".into(), label_map: None, embedder: EmbedderSection::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticsSection {
    pub top_n: usize,
    pub tolerance: f64,
    pub min_group: usize,
}

impl Default for AnalyticsSection {
    fn default() -> Self {
        let d = DetectorConfig::default();
        Self { top_n: 20, tolerance: d.tolerance, min_group: d.min_group }
    }
}

impl AnalyticsSection {
    pub fn detector(&self) -> DetectorConfig {
        DetectorConfig { tolerance: self.tolerance, min_group: self.min_group }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub listen: String,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self { listen: "127.0.0.1:9464".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub store: StoreSection,
    pub discovery: DiscoverySection,
    pub fetch: FetchSection,
    pub textprep: TextprepSection,
    pub dedup: DedupSection,
    pub langid: LangidSection,
    pub topics: TopicsSection,
    pub analytics: AnalyticsSection,
    pub metrics: MetricsSection,
}

impl Config {
    pub fn from_toml(s: &str) -> Result<Self, PipelineError> {
        toml::from_str(s).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn shipped() -> Self {
        Self::from_toml(DEFAULT_CONFIG_TOML).expect("shipped config parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Loads `path`, else the file named by `ONIONSCOPE_CONFIG`, else the shipped defaults.
    pub fn resolve(path: Option<&Path>) -> Result<Self, PipelineError> {
        match path {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(PathBuf::from(p)),
                _ => Ok(Self::shipped()),
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Hex sha256 of the canonical JSON form.
    pub fn snapshot_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let mut names = std::collections::HashSet::new();
        for s in &self.discovery.sources {
            s.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
            if !names.insert(s.name.as_str()) {
                return bad(format!("duplicate source name `{}`", s.name));
            }
        }
        if self.discovery.gateway_domains.iter().any(|d| d.trim().is_empty() || d.contains('/')) {
            return bad("gateway domains must be bare host names".into());
        }
        if let Some(p) = &self.discovery.proxy {
            parse_endpoint(p)?;
        }
        if self.fetch.workers == 0 {
            return bad("fetch.workers must be at least 1".into());
        }
        if self.fetch.proxies.is_empty() {
            return bad("fetch.proxies needs at least one endpoint".into());
        }
        self.fetch.proxy_endpoints()?;
        if self.fetch.max_attempts == 0 {
            return bad("fetch.max_attempts must be at least 1".into());
        }
        for (k, v) in [
            ("fetch.timeout_secs", self.fetch.timeout_secs),
            ("fetch.backoff_secs", self.fetch.backoff_secs),
            ("fetch.visibility_timeout_secs", self.fetch.visibility_timeout_secs),
            ("discovery.http_timeout_secs", self.discovery.http_timeout_secs),
            ("topics.embedder.timeout_secs", self.topics.embedder.timeout_secs),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return bad(format!("{k} must be positive"));
            }
        }
        if self.fetch.max_replacement_ratio != MAX_REPLACEMENT_RATIO {
            return bad(format!("fetch.max_replacement_ratio is fixed at {MAX_REPLACEMENT_RATIO} in this build"));
        }
        let d = &self.dedup;
        if d.shingle_k == 0 {
            return bad("dedup.shingle_k must be positive".into());
        }
        if !(0.0..=1.0).contains(&d.threshold) {
            return bad("dedup.threshold must lie in [0, 1]".into());
        }
        if (d.num_perm, d.bands, d.rows_per_band) != (NUM_PERM, BANDS, ROWS_PER_BAND) {
            return bad(format!(
                "dedup signature layout is fixed at {NUM_PERM} permutations in {BANDS} bands of {ROWS_PER_BAND} rows in this build"
            ));
        }
        let l = &self.langid;
        if l.profile_len == 0 || l.doc_len == 0 {
            return bad("langid lengths must be positive".into());
        }
        if l.confident_words != CONFIDENT_WORDS {
            return bad(format!("langid.confident_words is fixed at {CONFIDENT_WORDS} in this build"));
        }
        let t = &self.topics;
        if t.model.reduced_dim == 0 || t.model.min_cluster_size < 2 || t.model.min_samples == 0 || t.model.top_k == 0 {
            return bad("topics sizes must be positive (min_cluster_size at least 2)".into());
        }
        if !(0.0..=1.0).contains(&t.model.assign_floor) {
            return bad("topics.assign_floor must lie in [0, 1]".into());
        }
        if t.language.trim().is_empty() {
            return bad("topics.language is empty".into());
        }
        if t.embedder.dim == 0 || t.embedder.batch_size == 0 {
            return bad("topics.embedder sizes must be positive".into());
        }
        if t.embedder.kind == EmbedderKind::SidecarStdio && t.embedder.command.is_empty() {
            return bad("topics.embedder.command is empty".into());
        }
        if self.analytics.top_n == 0 || self.analytics.min_group < 2 || !(self.analytics.tolerance >= 0.0) {
            return bad("analytics: top_n must be positive, min_group at least 2, tolerance non-negative".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::SourceKind;

    #[test]
    fn shipped_config_is_valid() {
        let c = Config::shipped();
        c.validate().unwrap();
        let count = |k: SourceKind| c.discovery.sources.iter().filter(|s| s.kind == k).count();
        assert_eq!(count(SourceKind::ThreatIntel), 6);
        assert_eq!(count(SourceKind::TorRepository), 13);
        assert_eq!(c.discovery.gateway_domains.len(), 19);
        assert_eq!(c.fetch.workers, 10);
        assert_eq!(c.dedup.num_perm, 128);
        assert_eq!(c.topics.model, TopicsConfig::default());
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
    }

    #[test]
    fn toml_round_trip() {
        let c = Config::shipped();
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(c.snapshot_hash(), Config::shipped().snapshot_hash());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Config::from_toml("[fetch]\nworkerz = 3").is_err());
        let mut c = Config::default();
        c.fetch.workers = 0;
        assert!(c.validate().is_err());
        let mut c = Config::default();
        c.dedup.bands = 4;
        assert!(c.validate().is_err());
        let mut c = Config::default();
        c.fetch.proxies = vec!["nohost".into()];
        assert!(c.validate().is_err());
    }
}
