//! Python module `onionscope`.

use std::path::PathBuf;

use chrono::{DateTime, Utc};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use onionscope::dedup::{CorpusState, DedupConfig, DedupInput, Verdict};
use onionscope::langid::{LanguageDetector, NgramDetector, ProfileSet};
use onionscope::pipeline::fixture::{fixture_day, FIXTURE_SEED};
use onionscope::pipeline::{self, BatchOptions, Pipeline, Stage};
use onionscope::store::{Catalogs, FsObjectStore};
use onionscope::{textprep, DayKey};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// A validated v3 onion address.
#[pyclass(frozen, eq, hash, skip_from_py_object, module = "onionscope")]
#[derive(Clone, PartialEq, Eq, Hash)]
struct OnionAddress(onionscope::OnionAddress);

#[pymethods]
impl OnionAddress {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        onionscope::parse_onion_address(text).map(Self).map_err(value_err)
    }

    #[getter]
    fn label(&self) -> &str {
        self.0.label()
    }

    #[getter]
    fn hostname(&self) -> String {
        self.0.hostname()
    }

    #[getter]
    fn version(&self) -> u8 {
        self.0.version()
    }

    #[getter]
    fn checksum<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.0.checksum())
    }

    #[getter]
    fn pubkey<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.0.pubkey())
    }

    fn __str__(&self) -> String {
        self.0.hostname()
    }

    fn __repr__(&self) -> String {
        format!("OnionAddress('{}')", self.0.hostname())
    }
}

#[pyfunction]
fn parse_onion_address(text: &str) -> PyResult<OnionAddress> {
    OnionAddress::new(text)
}

#[pyfunction]
fn extract_onion_addresses(text: &str) -> Vec<OnionAddress> {
    onionscope::extract_onion_addresses(text).into_iter().map(OnionAddress).collect()
}

#[pyfunction]
fn compute_v3_checksum<'py>(py: Python<'py>, pubkey: &[u8], version: u8) -> PyResult<Bound<'py, PyBytes>> {
    let key: [u8; 32] = pubkey.try_into().map_err(|_| value_err("pubkey must be 32 bytes"))?;
    Ok(PyBytes::new(py, &onionscope::compute_v3_checksum(&key, version)))
}

#[pyfunction]
fn extract_main_text(html: &str) -> String {
    textprep::extract_main_text(html)
}

#[pyfunction]
fn extract_title(html: &str) -> Option<String> {
    textprep::extract_title(html)
}

/// Cleans extracted text with the default money symbols.
#[pyfunction]
fn preprocess(text: &str) -> String {
    textprep::preprocess(text)
}

/// Returns `(language, confidence)` from the bundled profiles.
#[pyfunction]
fn detect_language(text: &str) -> (String, f64) {
    let v = NgramDetector::new(&ProfileSet::bundled()).detect(text);
    (v.lang, v.confidence)
}

/// Incremental exact and near-duplicate detection over a growing corpus.
#[pyclass(module = "onionscope")]
struct Deduplicator(CorpusState);

#[pymethods]
impl Deduplicator {
    #[new]
    #[pyo3(signature = (threshold = None, shingle_k = None, seed = None))]
    fn new(threshold: Option<f64>, shingle_k: Option<usize>, seed: Option<u64>) -> PyResult<Self> {
        let d = DedupConfig::default();
        let cfg = DedupConfig {
            threshold: threshold.unwrap_or(d.threshold),
            shingle_k: shingle_k.unwrap_or(d.shingle_k),
            seed: seed.unwrap_or(d.seed),
        };
        if !(0.0..=1.0).contains(&cfg.threshold) || cfg.shingle_k == 0 {
            return Err(value_err("threshold must be in [0, 1] and shingle_k positive"));
        }
        Ok(Self(CorpusState::new(cfg)))
    }

    /// Deduplicates `(id, text)` pairs in order, or `(id, text, unix_seconds)`
    /// triples. Returns one dict per document.
    fn dedup<'py>(&mut self, py: Python<'py>, docs: Vec<Bound<'py, PyAny>>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let mut inputs = Vec::with_capacity(docs.len());
        for d in docs {
            let (id, text, ts): (String, String, Option<i64>) = match d.extract::<(String, String, i64)>() {
                Ok((id, text, ts)) => (id, text, Some(ts)),
                Err(_) => {
                    let (id, text) = d.extract::<(String, String)>()?;
                    (id, text, None)
                }
            };
            let downloaded_at = match ts {
                Some(s) => DateTime::<Utc>::from_timestamp(s, 0).ok_or_else(|| value_err("timestamp out of range"))?,
                None => DateTime::<Utc>::UNIX_EPOCH,
            };
            inputs.push(DedupInput { id, text, downloaded_at });
        }
        let outcomes = self.0.dedup_batch(&inputs);
        outcomes
            .into_iter()
            .map(|o| {
                let d = PyDict::new(py);
                d.set_item("doc", &o.doc)?;
                d.set_item("verdict", o.verdict.label())?;
                d.set_item("representative", &o.representative)?;
                d.set_item("group", o.group)?;
                let jaccard = match o.verdict {
                    Verdict::ExactDuplicateOf { .. } => Some(1.0),
                    Verdict::NearDuplicateOf { jaccard, .. } => Some(jaccard),
                    Verdict::Unique => None,
                };
                d.set_item("jaccard", jaccard)?;
                Ok(d)
            })
            .collect()
    }

    #[getter]
    fn group_count(&self) -> usize {
        self.0.groups().len()
    }

    #[getter]
    fn doc_count(&self) -> usize {
        self.0.doc_count()
    }
}

/// Pipeline configuration.
#[pyclass(skip_from_py_object, module = "onionscope")]
#[derive(Clone)]
struct Config(pipeline::Config);

#[pymethods]
impl Config {
    /// The shipped defaults.
    #[new]
    fn new() -> Self {
        Self(pipeline::Config::shipped())
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        pipeline::Config::from_toml(text).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        pipeline::Config::load(path).map(Self).map_err(value_err)
    }

    fn validate(&self) -> PyResult<()> {
        self.0.validate().map_err(value_err)
    }

    fn to_toml(&self) -> String {
        self.0.to_toml()
    }

    fn snapshot_hash(&self) -> String {
        self.0.snapshot_hash()
    }

    #[getter]
    fn store_root(&self) -> PathBuf {
        self.0.store.root.clone()
    }

    #[setter]
    fn set_store_root(&mut self, root: PathBuf) {
        self.0.store.root = root;
    }
}

fn day_of(date: &str) -> PyResult<DayKey> {
    date.parse().map_err(value_err)
}

fn open(config: &pipeline::Config) -> PyResult<(FsObjectStore, Catalogs)> {
    let store = FsObjectStore::open(&config.store.root).map_err(runtime_err)?;
    let catalogs = Catalogs::open(config.store.catalog_path()).map_err(runtime_err)?;
    Ok((store, catalogs))
}

/// Runs the daily batch for `date` (YYYY-MM-DD). Returns a dict with each
/// stage's status and whether the day was merged.
#[pyfunction]
#[pyo3(signature = (config, date, stage = None))]
fn run_daily_batch<'py>(py: Python<'py>, config: &Config, date: &str, stage: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let day = day_of(date)?;
    let only = stage.map(|s| s.parse::<Stage>()).transpose().map_err(value_err)?;
    let cfg = config.0.clone();
    let manifest = py.detach(move || {
        let (store, catalogs) = open(&cfg)?;
        let p = Pipeline::new(&store, cfg.clone()).with_catalogs(&catalogs).with_lock_file(cfg.store.lock_path());
        let result = p.run_daily_batch(day, &BatchOptions { only, fail_at: None });
        result.map_err(runtime_err)
    })?;
    let out = PyDict::new(py);
    let stages = PyDict::new(py);
    for s in Stage::ALL {
        let status = match manifest.status(s) {
            pipeline::StageStatus::Pending => "pending",
            pipeline::StageStatus::Ok => "ok",
            pipeline::StageStatus::Failed => "failed",
        };
        stages.set_item(s.as_str(), status)?;
    }
    out.set_item("day", day.iso())?;
    out.set_item("stages", stages)?;
    out.set_item("merged", manifest.merged)?;
    Ok(out)
}

/// Writes report files for a processed day; returns their paths.
#[pyfunction]
#[pyo3(signature = (config, date, plots = false))]
fn report(config: &Config, date: &str, plots: bool) -> PyResult<Vec<PathBuf>> {
    let day = day_of(date)?;
    let (store, catalogs) = open(&config.0)?;
    let keys = Pipeline::new(&store, config.0.clone()).with_catalogs(&catalogs).report(day, plots).map_err(runtime_err)?;
    Ok(keys.iter().map(|k| store.path_of(k)).collect())
}

/// Writes a synthetic day of pages with planted duplicates into the store.
/// Returns the planted counts.
#[pyfunction]
#[pyo3(signature = (config, date = "2023-02-01", seed = FIXTURE_SEED))]
fn install_fixture<'py>(py: Python<'py>, config: &Config, date: &str, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let fx = fixture_day(day_of(date)?, seed);
    let (store, catalogs) = open(&config.0)?;
    fx.install(&store, Some(&catalogs)).map_err(runtime_err)?;
    let d = PyDict::new(py);
    d.set_item("pages", fx.pages.len())?;
    d.set_item("exact", fx.truth.exact)?;
    d.set_item("near", fx.truth.near)?;
    d.set_item("unique", fx.truth.unique)?;
    d.set_item("bad_or_empty", fx.truth.bad_or_empty)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "onionscope")]
fn onionscope_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<OnionAddress>()?;
    m.add_class::<Deduplicator>()?;
    m.add_class::<Config>()?;
    m.add_function(wrap_pyfunction!(parse_onion_address, m)?)?;
    m.add_function(wrap_pyfunction!(extract_onion_addresses, m)?)?;
    m.add_function(wrap_pyfunction!(compute_v3_checksum, m)?)?;
    m.add_function(wrap_pyfunction!(extract_main_text, m)?)?;
    m.add_function(wrap_pyfunction!(extract_title, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(detect_language, m)?)?;
    m.add_function(wrap_pyfunction!(run_daily_batch, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(install_fixture, m)?)?;
    Ok(())
}
