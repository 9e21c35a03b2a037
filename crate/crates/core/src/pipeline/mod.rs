//! Daily batch: pull, extract, preprocess, dedup, langid, topics and analytics
//! over one day of stored pages, followed by a merge into the global dataset.
//!
//! Each stage reads only the artifacts it declares in [`Stage::inputs`] and
//! writes `datasets/<day>/<artifact>` plus `datasets/<day>/<stage>.metrics.json`.

pub mod config;
pub mod fixture;
mod global;
pub mod stages;

pub use config::{Config, CONFIG_ENV, DEFAULT_CONFIG_TOML};
pub use global::{merge_global, DayArtifacts, DayTotals, GlobalState, GlobalTopic, GroupHistory};

use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use self::config::EmbedderKind;
use self::stages::{CatalogView, PreprocessedRow, RawPage, TopicAssignment};
use crate::analytics::{emit_report, Report, ReportError, ReportFormat};
use crate::dedup::{CorpusSnapshot, CorpusState, DedupOutcome};
use crate::langid::{LanguageRow, NgramDetector, ProfileSet};
use crate::store::{Bucket, Catalogs, ObjectKey, ObjectStore, StoreError};
use crate::textprep::Preprocessor;
use crate::topics::{EmbeddingProvider, HashingEmbedder, LabelMap, Pca, SidecarProvider, TopicModel, TopicsError};
use crate::types::DayKey;
use crate::{parse_onion_address, OnionAddress};

pub const MANIFEST: &str = "manifest.json";
pub const TOPIC_MODEL: &str = "topic_model.json";
pub const GLOBAL_STATE: &str = "global/state.json";
pub const GLOBAL_CORPUS: &str = "global/corpus_state.json";
pub const GLOBAL_METRICS: &str = "global/metrics.json";

const PULLED: &str = "pulled.jsonl";
const EXTRACTED: &str = "extracted.jsonl";
const PREPROCESSED: &str = "preprocessed.jsonl";
const DEDUPLICATED: &str = "deduplicated.jsonl";
const CORPUS_STATE: &str = "corpus_state.json";
const LANGUAGES: &str = "languages.jsonl";
const TOPICS: &str = "topics.jsonl";
const ANALYTICS: &str = "analytics.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("another batch holds the lock at {}", .0.display())]
    Locked(PathBuf),
    #[error("lock file {}: {source}", path.display())]
    Lock {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("stage {stage} failed: {cause}")]
    StageFailed { stage: Stage, cause: String, manifest: Box<BatchManifest> },
    #[error("no batch manifest for {0}")]
    NoManifest(DayKey),
    #[error("analytics for {0} have not been produced")]
    NoAnalytics(DayKey),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("corrupt artifact {key}: {reason}")]
    Corrupt { key: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pull,
    Extract,
    Preprocess,
    Dedup,
    Langid,
    Topics,
    Analytics,
}

impl Stage {
    pub const ALL: [Stage; 7] = [Stage::Pull, Stage::Extract, Stage::Preprocess, Stage::Dedup, Stage::Langid, Stage::Topics, Stage::Analytics];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pull => "pull",
            Stage::Extract => "extract",
            Stage::Preprocess => "preprocess",
            Stage::Dedup => "dedup",
            Stage::Langid => "langid",
            Stage::Topics => "topics",
            Stage::Analytics => "analytics",
        }
    }

    /// Dataset artifacts of earlier stages this stage reads.
    pub fn inputs(self) -> &'static [&'static str] {
        match self {
            Stage::Pull => &[],
            Stage::Extract => &[PULLED],
            Stage::Preprocess => &[EXTRACTED],
            Stage::Dedup => &[PREPROCESSED],
            Stage::Langid => &[PREPROCESSED, DEDUPLICATED],
            Stage::Topics => &[PREPROCESSED, DEDUPLICATED, LANGUAGES],
            Stage::Analytics => &[PREPROCESSED, DEDUPLICATED, LANGUAGES, TOPICS],
        }
    }

    /// Dataset artifacts this stage writes, besides its metrics file.
    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Pull => &[PULLED],
            Stage::Extract => &[EXTRACTED],
            Stage::Preprocess => &[PREPROCESSED],
            Stage::Dedup => &[DEDUPLICATED, CORPUS_STATE],
            Stage::Langid => &[LANGUAGES],
            Stage::Topics => &[TOPICS],
            Stage::Analytics => &[ANALYTICS],
        }
    }

    pub fn metrics_name(self) -> String {
        format!("{}.metrics.json", self.as_str())
    }

    fn index(self) -> usize {
        Stage::ALL.iter().position(|s| *s == self).expect("listed")
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL.into_iter().find(|st| st.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = Stage::ALL.iter().map(|s| s.as_str()).collect();
            PipelineError::Config(format!("unknown stage `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Pending,
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub status: StageStatus,
    pub artifacts: Vec<ObjectKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl StageRecord {
    fn pending() -> Self {
        Self { status: StageStatus::Pending, artifacts: Vec::new(), error: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchManifest {
    pub day: DayKey,
    pub config_hash: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    pub stages: std::collections::BTreeMap<Stage, StageRecord>,
    /// Whether the day has been folded into the global dataset.
    pub merged: bool,
}

impl BatchManifest {
    pub fn new(day: DayKey, config_hash: String) -> Self {
        Self {
            day,
            config_hash,
            started_at: Utc::now(),
            finished_at: None,
            stages: Stage::ALL.iter().map(|s| (*s, StageRecord::pending())).collect(),
            merged: false,
        }
    }

    pub fn status(&self, stage: Stage) -> StageStatus {
        self.stages.get(&stage).map_or(StageStatus::Pending, |r| r.status)
    }

    pub fn all_ok(&self) -> bool {
        Stage::ALL.iter().all(|s| self.status(*s) == StageStatus::Ok)
    }

    /// Checks that every ok stage's artifacts exist.
    pub fn verify(&self, store: &dyn ObjectStore) -> Result<bool, StoreError> {
        for r in self.stages.values().filter(|r| r.status == StageStatus::Ok) {
            for k in &r.artifacts {
                if !store.exists(k)? {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BatchOptions {
    /// Run only this stage, reading earlier artifacts from the store.
    pub only: Option<Stage>,
    /// Make this stage fail without running it.
    pub fail_at: Option<Stage>,
}

/// One stored page of the day, as listed by the pull stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulledPage {
    pub address: OnionAddress,
    /// Object name in the `onions` bucket.
    pub object: String,
    pub downloaded_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PullMetrics {
    pub objects: u64,
    pub pages: u64,
    pub skipped: u64,
}

/// Exclusive batch lock; the file is removed on drop.
#[derive(Debug)]
pub struct BatchLock {
    path: PathBuf,
}

impl BatchLock {
    pub fn acquire(path: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| PipelineError::Lock { path: path.clone(), source })?;
        }
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::Locked(path)),
            Err(source) => Err(PipelineError::Lock { path, source }),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Drop for BatchLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn to_jsonl<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).expect("rows serialize");
        out.push(b'\n');
    }
    out
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("value serializes");
    out.push(b'\n');
    out
}

/// Artifact access for one stage: reads are limited to declared inputs,
/// writes to declared outputs.
struct StageIo<'a> {
    store: &'a dyn ObjectStore,
    day: DayKey,
    stage: Stage,
    written: Vec<ObjectKey>,
}

impl<'a> StageIo<'a> {
    fn read_rows<T: DeserializeOwned>(&self, name: &str) -> Result<Vec<T>, String> {
        if !self.stage.inputs().contains(&name) {
            return Err(format!("{name} is not a declared input of {}", self.stage));
        }
        let key = ObjectKey::new(Bucket::Datasets, self.day, name);
        let bytes = self.store.get_object(&key).map_err(|e| format!("missing input {key}: {e}"))?;
        let text = String::from_utf8(bytes).map_err(|e| format!("{key}: {e}"))?;
        text.lines()
            .filter(|l| !l.is_empty())
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("{key} line {}: {e}", i + 1)))
            .collect()
    }

    fn put(&mut self, bucket: Bucket, name: &str, bytes: &[u8]) -> Result<(), String> {
        let key = self.store.put_object(bucket, self.day, name, bytes).map_err(|e| e.to_string())?;
        self.written.push(key);
        Ok(())
    }

    fn write_rows<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), String> {
        debug_assert!(self.stage.outputs().contains(&name));
        self.put(Bucket::Datasets, name, &to_jsonl(rows))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), String> {
        debug_assert!(self.stage.outputs().contains(&name));
        self.put(Bucket::Datasets, name, &to_json(value))
    }

    fn write_metrics<T: Serialize>(&mut self, value: &T) -> Result<(), String> {
        let name = self.stage.metrics_name();
        self.put(Bucket::Datasets, &name, &to_json(value))
    }
}

/// Latest day strictly before `day` holding object `name` in `bucket`.
fn latest_before(store: &dyn ObjectStore, bucket: Bucket, name: &str, day: DayKey) -> Result<Option<ObjectKey>, StoreError> {
    for d in store.list_days(bucket)?.into_iter().rev().filter(|d| *d < day) {
        let key = ObjectKey::new(bucket, d, name);
        if store.exists(&key)? {
            return Ok(Some(key));
        }
    }
    Ok(None)
}

fn read_json<T: DeserializeOwned>(store: &dyn ObjectStore, key: &ObjectKey) -> Result<T, PipelineError> {
    let bytes = store.get_object(key)?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::Corrupt { key: key.to_string(), reason: e.to_string() })
}

/// Runs batches over an object store.
pub struct Pipeline<'a> {
    store: &'a dyn ObjectStore,
    catalogs: Option<&'a Catalogs>,
    config: Config,
    lock_path: Option<PathBuf>,
    embedder: Option<Box<dyn EmbeddingProvider + 'a>>,
}

impl<'a> Pipeline<'a> {
    pub fn new(store: &'a dyn ObjectStore, config: Config) -> Self {
        Self { store, catalogs: None, config, lock_path: None, embedder: None }
    }

    /// Source statistics and availability come from these catalogs.
    pub fn with_catalogs(mut self, catalogs: &'a Catalogs) -> Self {
        self.catalogs = Some(catalogs);
        self
    }

    pub fn with_lock_file(mut self, path: impl Into<PathBuf>) -> Self {
        self.lock_path = Some(path.into());
        self
    }

    /// Overrides the embedder chosen by the config.
    pub fn with_embedder(mut self, provider: Box<dyn EmbeddingProvider + 'a>) -> Self {
        self.embedder = Some(provider);
        self
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn manifest_key(day: DayKey) -> ObjectKey {
        ObjectKey::new(Bucket::Datasets, day, MANIFEST)
    }

    pub fn load_manifest(&self, day: DayKey) -> Result<BatchManifest, PipelineError> {
        let key = Self::manifest_key(day);
        if !self.store.exists(&key)? {
            return Err(PipelineError::NoManifest(day));
        }
        read_json(self.store, &key)
    }

    fn save_manifest(&self, m: &BatchManifest) -> Result<(), PipelineError> {
        self.store.put_object(Bucket::Datasets, m.day, MANIFEST, &to_json(m))?;
        Ok(())
    }

    /// Runs the day's stages in order, then merges the day into the global
    /// dataset once every stage is ok.
    pub fn run_daily_batch(&self, day: DayKey, opts: &BatchOptions) -> Result<BatchManifest, PipelineError> {
        self.config.validate()?;
        let _lock = self.lock_path.as_ref().map(BatchLock::acquire).transpose()?;
        let hash = self.config.snapshot_hash();
        let (mut manifest, to_run): (BatchManifest, Vec<Stage>) = match opts.only {
            None => (BatchManifest::new(day, hash), Stage::ALL.to_vec()),
            Some(s) => {
                let mut m = match self.load_manifest(day) {
                    Ok(m) => m,
                    Err(PipelineError::NoManifest(_)) => BatchManifest::new(day, hash.clone()),
                    Err(e) => return Err(e),
                };
                m.config_hash = hash;
                m.started_at = Utc::now();
                m.finished_at = None;
                (m, vec![s])
            }
        };
        let first = to_run[0].index();
        for s in &Stage::ALL[first..] {
            manifest.stages.insert(*s, StageRecord::pending());
        }
        manifest.merged = false;

        for stage in to_run {
            let result = if opts.fail_at == Some(stage) {
                Err("injected failure".to_string())
            } else {
                self.run_stage(stage, day)
            };
            match result {
                Ok(keys) => {
                    manifest.stages.insert(stage, StageRecord { status: StageStatus::Ok, artifacts: keys, error: None });
                }
                Err(cause) => {
                    log::error!("{day}: stage {stage} failed: {cause}");
                    manifest.stages.insert(
                        stage,
                        StageRecord { status: StageStatus::Failed, artifacts: Vec::new(), error: Some(cause.clone()) },
                    );
                    manifest.finished_at = Some(Utc::now());
                    self.save_manifest(&manifest)?;
                    return Err(PipelineError::StageFailed { stage, cause, manifest: Box::new(manifest) });
                }
            }
        }
        if manifest.all_ok() {
            self.merge_day(day)?;
            manifest.merged = true;
        }
        manifest.finished_at = Some(Utc::now());
        self.save_manifest(&manifest)?;
        Ok(manifest)
    }

    fn run_stage(&self, stage: Stage, day: DayKey) -> Result<Vec<ObjectKey>, String> {
        let mut io = StageIo { store: self.store, day, stage, written: Vec::new() };
        match stage {
            Stage::Pull => {
                let (rows, m) = self.pull(day).map_err(|e| e.to_string())?;
                io.write_rows(PULLED, &rows)?;
                io.write_metrics(&m)?;
            }
            Stage::Extract => {
                let pulled: Vec<PulledPage> = io.read_rows(PULLED)?;
                let pages = self.raw_pages(day, &pulled).map_err(|e| e.to_string())?;
                let (rows, m) = stages::extract(day, &pages);
                io.write_rows(EXTRACTED, &rows)?;
                io.write_metrics(&m)?;
            }
            Stage::Preprocess => {
                let rows: Vec<stages::ExtractedRow> = io.read_rows(EXTRACTED)?;
                let (out, m) = stages::preprocess(&rows, &Preprocessor::new(&self.config.textprep.money));
                io.write_rows(PREPROCESSED, &out)?;
                io.write_metrics(&m)?;
            }
            Stage::Dedup => {
                let rows: Vec<PreprocessedRow> = io.read_rows(PREPROCESSED)?;
                let mut corpus = self.prior_corpus(day).map_err(|e| e.to_string())?;
                let (outcomes, m) = stages::dedup(&rows, &mut corpus);
                io.write_rows(DEDUPLICATED, &outcomes)?;
                io.write_json(CORPUS_STATE, &corpus.snapshot())?;
                io.write_metrics(&m)?;
            }
            Stage::Langid => {
                let rows: Vec<PreprocessedRow> = io.read_rows(PREPROCESSED)?;
                let outcomes: Vec<DedupOutcome> = io.read_rows(DEDUPLICATED)?;
                let global = self.prior_global(day).map_err(|e| e.to_string())?;
                let detector = self.detector().map_err(|e| e.to_string())?;
                let (out, m) = stages::langid(&rows, &outcomes, &global, &detector);
                io.write_rows(LANGUAGES, &out)?;
                io.write_metrics(&m)?;
            }
            Stage::Topics => {
                let rows: Vec<PreprocessedRow> = io.read_rows(PREPROCESSED)?;
                let outcomes: Vec<DedupOutcome> = io.read_rows(DEDUPLICATED)?;
                let languages: Vec<LanguageRow> = io.read_rows(LANGUAGES)?;
                let global = self.prior_global(day).map_err(|e| e.to_string())?;
                let prior = self.prior_model(day).map_err(|e| e.to_string())?;
                let map = self.label_map().map_err(|e| e.to_string())?;
                let t = &self.config.topics;
                let fallback;
                let provider: &dyn EmbeddingProvider = match (&self.embedder, &prior) {
                    (Some(p), _) => p.as_ref(),
                    (None, Some(_)) => {
                        fallback = HashingEmbedder::new(t.embedder.dim, t.model.embed_seed);
                        &fallback
                    }
                    (None, None) => {
                        let built = self.build_embedder().map_err(|e| e.to_string())?;
                        return self.finish_topics(io, &rows, &outcomes, &languages, &global, None, built.as_ref(), &map);
                    }
                };
                return self.finish_topics(io, &rows, &outcomes, &languages, &global, prior.as_ref(), provider, &map);
            }
            Stage::Analytics => {
                let rows: Vec<PreprocessedRow> = io.read_rows(PREPROCESSED)?;
                let outcomes: Vec<DedupOutcome> = io.read_rows(DEDUPLICATED)?;
                let languages: Vec<LanguageRow> = io.read_rows(LANGUAGES)?;
                let topics: Vec<TopicAssignment> = io.read_rows(TOPICS)?;
                let global = self.prior_global(day).map_err(|e| e.to_string())?;
                let merged = merge_global(
                    &DayArtifacts { day, rows: &rows, outcomes: &outcomes, languages: &languages, topics: &topics },
                    &global,
                );
                let view = self.catalogs.map(|c| CatalogView { discoveries: c.discovery_rows(), downloads: c.download_rows() });
                let (report, stats) = stages::analytics(&stages::AnalyticsInputs {
                    day,
                    rows: &rows,
                    outcomes: &outcomes,
                    languages: &languages,
                    topics: &topics,
                    catalog: view.as_ref(),
                    merged: &merged,
                    top_n: self.config.analytics.top_n,
                    detector: self.config.analytics.detector(),
                });
                io.write_json(ANALYTICS, &report)?;
                io.write_metrics(&stats)?;
            }
        }
        Ok(io.written)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish_topics(
        &self,
        mut io: StageIo<'_>,
        rows: &[PreprocessedRow],
        outcomes: &[DedupOutcome],
        languages: &[LanguageRow],
        global: &GlobalState,
        prior: Option<&TopicModel>,
        provider: &dyn EmbeddingProvider,
        map: &LabelMap,
    ) -> Result<Vec<ObjectKey>, String> {
        let t = &self.config.topics;
        let out = stages::topics(rows, outcomes, languages, global, prior, provider, &Pca, &t.model, &t.language, map)
            .map_err(|e| e.to_string())?;
        if !out.metrics.unmapped_clusters.is_empty() {
            log::warn!("{}: clusters without labels: {:?}", io.day, out.metrics.unmapped_clusters);
        }
        io.write_rows(TOPICS, &out.rows)?;
        if let Some(model) = &out.fitted {
            io.put(Bucket::Models, TOPIC_MODEL, model.to_json().as_bytes())?;
        } else {
            // a stale model from an earlier run of this day must not survive
            let key = ObjectKey::new(Bucket::Models, io.day, TOPIC_MODEL);
            if self.store.exists(&key).map_err(|e| e.to_string())? {
                self.store.delete_object(&key).map_err(|e| e.to_string())?;
            }
        }
        io.write_metrics(&out.metrics)?;
        Ok(io.written)
    }

    /// Lists the day's stored pages with their download times.
    fn pull(&self, day: DayKey) -> Result<(Vec<PulledPage>, PullMetrics), PipelineError> {
        let midnight = day.date().and_hms_opt(0, 0, 0).expect("midnight exists").and_utc();
        let mut rows = Vec::new();
        let mut m = PullMetrics::default();
        for key in self.store.list_by_date(Bucket::Onions, day)? {
            m.objects += 1;
            let address = key
                .name
                .strip_suffix(".html")
                .ok_or_else(|| "not a page".to_string())
                .and_then(|label| parse_onion_address(&format!("{label}.onion")).map_err(|e| e.to_string()));
            let address: OnionAddress = match address {
                Ok(a) => a,
                Err(e) => {
                    log::warn!("skipping {key}: {e}");
                    m.skipped += 1;
                    continue;
                }
            };
            let downloaded_at = self
                .catalogs
                .and_then(|c| c.download_row(&address))
                .and_then(|r| r.downloaded_timestamp)
                .unwrap_or(midnight);
            rows.push(PulledPage { address, object: key.name, downloaded_at });
        }
        m.pages = rows.len() as u64;
        Ok((rows, m))
    }

    fn raw_pages(&self, day: DayKey, pulled: &[PulledPage]) -> Result<Vec<RawPage>, PipelineError> {
        pulled
            .iter()
            .map(|p| {
                let bytes = self.store.get_object(&ObjectKey::new(Bucket::Onions, day, p.object.as_str()))?;
                Ok(RawPage {
                    address: p.address.clone(),
                    html: String::from_utf8_lossy(&bytes).into_owned(),
                    downloaded_at: p.downloaded_at,
                })
            })
            .collect()
    }

    /// Global state as of the last merged day before `day`.
    pub fn prior_global(&self, day: DayKey) -> Result<GlobalState, PipelineError> {
        match latest_before(self.store, Bucket::Datasets, GLOBAL_STATE, day)? {
            Some(k) => read_json(self.store, &k),
            None => Ok(GlobalState::default()),
        }
    }

    /// Latest global state up to and including `day`, or the newest overall.
    pub fn global_state(&self, day: Option<DayKey>) -> Result<Option<(DayKey, GlobalState)>, PipelineError> {
        let bound = day.map_or(DayKey::from_ymd(9999, 12, 31).expect("valid"), |d| d.succ());
        match latest_before(self.store, Bucket::Datasets, GLOBAL_STATE, bound)? {
            Some(k) => Ok(Some((k.day, read_json(self.store, &k)?))),
            None => Ok(None),
        }
    }

    fn prior_corpus(&self, day: DayKey) -> Result<CorpusState, PipelineError> {
        match latest_before(self.store, Bucket::Datasets, GLOBAL_CORPUS, day)? {
            Some(k) => {
                let snap: CorpusSnapshot = read_json(self.store, &k)?;
                if snap.config != self.config.dedup.dedup_config() {
                    return Err(PipelineError::Config(format!("{k} was built with a different dedup config")));
                }
                CorpusState::restore(snap).map_err(|e| PipelineError::Corrupt { key: k.to_string(), reason: e.to_string() })
            }
            None => Ok(CorpusState::new(self.config.dedup.dedup_config())),
        }
    }

    fn prior_model(&self, day: DayKey) -> Result<Option<TopicModel>, PipelineError> {
        match latest_before(self.store, Bucket::Models, TOPIC_MODEL, day)? {
            Some(k) => {
                let bytes = self.store.get_object(&k)?;
                let text = String::from_utf8_lossy(&bytes);
                TopicModel::from_json(&text)
                    .map(Some)
                    .map_err(|e| PipelineError::Corrupt { key: k.to_string(), reason: e.to_string() })
            }
            None => Ok(None),
        }
    }

    fn detector(&self) -> Result<NgramDetector, PipelineError> {
        let l = &self.config.langid;
        let set = match &l.profiles {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
                ProfileSet::from_json(&text).map_err(|e| PipelineError::Config(e.to_string()))?
            }
            None => ProfileSet::bundled(),
        };
        if set.profile_len != l.profile_len {
            return Err(PipelineError::Config(format!(
                "langid.profile_len is {} but the profiles hold {}",
                l.profile_len, set.profile_len
            )));
        }
        Ok(NgramDetector::new(&set).with_doc_len(l.doc_len))
    }

    fn label_map(&self) -> Result<LabelMap, PipelineError> {
        match &self.config.topics.label_map {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
                LabelMap::from_json(&text).map_err(|e| PipelineError::Config(e.to_string()))
            }
            None => Ok(LabelMap::shipped()),
        }
    }

    fn build_embedder(&self) -> Result<Box<dyn EmbeddingProvider>, TopicsError> {
        let e = &self.config.topics.embedder;
        let hashing = || Box::new(HashingEmbedder::new(e.dim, self.config.topics.model.embed_seed)) as Box<dyn EmbeddingProvider>;
        let sidecar = match e.kind {
            EmbedderKind::Hashing => return Ok(hashing()),
            EmbedderKind::SidecarStdio => SidecarProvider::spawn(&e.command[0], &e.command[1..], e.batch_size),
            EmbedderKind::SidecarTcp => {
                SidecarProvider::connect(e.address.as_str(), Duration::from_secs_f64(e.timeout_secs), e.batch_size)
            }
        };
        match sidecar {
            Ok(p) => Ok(Box::new(p)),
            Err(TopicsError::ProviderUnavailable(why)) if e.fallback => {
                log::warn!("embedding sidecar unavailable ({why}); using the hashing embedder");
                Ok(hashing())
            }
            Err(err) => Err(err),
        }
    }

    fn read_day_rows<T: DeserializeOwned>(&self, day: DayKey, name: &str) -> Result<Vec<T>, PipelineError> {
        let key = ObjectKey::new(Bucket::Datasets, day, name);
        let bytes = self.store.get_object(&key)?;
        String::from_utf8_lossy(&bytes)
            .lines()
            .filter(|l| !l.is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| PipelineError::Corrupt { key: key.to_string(), reason: e.to_string() }))
            .collect()
    }

    /// Folds the day's artifacts into the global state and persists the
    /// state, its metrics and the day's dedup corpus under `global/`.
    pub fn merge_day(&self, day: DayKey) -> Result<GlobalState, PipelineError> {
        let rows: Vec<PreprocessedRow> = self.read_day_rows(day, PREPROCESSED)?;
        let outcomes: Vec<DedupOutcome> = self.read_day_rows(day, DEDUPLICATED)?;
        let languages: Vec<LanguageRow> = self.read_day_rows(day, LANGUAGES)?;
        let topics: Vec<TopicAssignment> = self.read_day_rows(day, TOPICS)?;
        let prior = self.prior_global(day)?;
        let merged = merge_global(&DayArtifacts { day, rows: &rows, outcomes: &outcomes, languages: &languages, topics: &topics }, &prior);
        let corpus = self.store.get_object(&ObjectKey::new(Bucket::Datasets, day, CORPUS_STATE))?;
        self.store.put_object(Bucket::Datasets, day, GLOBAL_CORPUS, &corpus)?;
        self.store.put_object(Bucket::Datasets, day, GLOBAL_STATE, &to_json(&merged))?;
        self.store.put_object(Bucket::Datasets, day, GLOBAL_METRICS, &to_json(&merged.metrics()))?;
        Ok(merged)
    }

    pub fn load_report(&self, day: DayKey) -> Result<Report, PipelineError> {
        let key = ObjectKey::new(Bucket::Datasets, day, ANALYTICS);
        if !self.store.exists(&key)? {
            return Err(PipelineError::NoAnalytics(day));
        }
        read_json(self.store, &key)
    }

    /// Writes the day's report files; plots only when asked.
    pub fn report(&self, day: DayKey, plots: bool) -> Result<Vec<ObjectKey>, PipelineError> {
        let report = self.load_report(day)?;
        let mut formats = vec![ReportFormat::Json, ReportFormat::Csv];
        if plots {
            formats.push(ReportFormat::Svg);
        }
        Ok(emit_report(self.store, day, &report, &formats)?)
    }

    /// `name value` lines for the newest global metrics.
    pub fn metrics_text(&self) -> Result<String, PipelineError> {
        let mut out = String::new();
        if let Some((day, g)) = self.global_state(None)? {
            out.push_str(&format!("onionscope_last_merged_day {}\n", day.date().format("%Y%m%d")));
            for (k, v) in g.metrics() {
                out.push_str(&format!("{k} {v}\n"));
            }
        }
        if let Some(c) = self.catalogs {
            out.push_str(&format!("onionscope_addresses_identified {}\n", c.address_count()));
            out.push_str(&format!("onionscope_addresses_downloaded {}\n", c.downloaded_count()));
        }
        Ok(out)
    }
}

/// Runs one day's batch with the given store and config.
pub fn run_daily_batch(
    store: &dyn ObjectStore,
    catalogs: Option<&Catalogs>,
    day: DayKey,
    config: &Config,
    opts: &BatchOptions,
) -> Result<BatchManifest, PipelineError> {
    let mut p = Pipeline::new(store, config.clone());
    if let Some(c) = catalogs {
        p = p.with_catalogs(c);
    }
    p.run_daily_batch(day, opts)
}
