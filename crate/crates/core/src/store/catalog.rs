use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{page_object_name, Bucket, ObjectKey, ObjectStore, StoreError};
use crate::onion::OnionAddress;
use crate::types::{DayKey, Discovery, FetchStatus, SourceKind};

/// One sighting of an address by one source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscoveryCatalogRow {
    pub address: OnionAddress,
    pub advertiser: String,
    pub identification_timestamp: DateTime<Utc>,
    pub source: SourceKind,
}

/// Download state of an address, with one flag per source that reported it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DownloadCatalogRow {
    pub address: OnionAddress,
    pub downloaded: bool,
    pub downloaded_timestamp: Option<DateTime<Utc>>,
    /// Day partition of the stored page, when downloaded.
    pub object_day: Option<DayKey>,
    pub found_in_threat_intel: bool,
    pub found_in_code_repo: bool,
    pub found_in_gateway: bool,
    pub found_in_tor_repo: bool,
    pub first_seen: DateTime<Utc>,
    pub last_status: Option<FetchStatus>,
    pub last_attempt: Option<DateTime<Utc>>,
    pub attempts: u32,
}

impl DownloadCatalogRow {
    fn new(address: OnionAddress, first_seen: DateTime<Utc>) -> Self {
        Self {
            address,
            downloaded: false,
            downloaded_timestamp: None,
            object_day: None,
            found_in_threat_intel: false,
            found_in_code_repo: false,
            found_in_gateway: false,
            found_in_tor_repo: false,
            first_seen,
            last_status: None,
            last_attempt: None,
            attempts: 0,
        }
    }

    pub fn found_in(&self, kind: SourceKind) -> bool {
        match kind {
            SourceKind::ThreatIntel => self.found_in_threat_intel,
            SourceKind::CodeRepo => self.found_in_code_repo,
            SourceKind::WebGateway => self.found_in_gateway,
            SourceKind::TorRepository => self.found_in_tor_repo,
        }
    }

    fn set_found(&mut self, kind: SourceKind) -> bool {
        let flag = match kind {
            SourceKind::ThreatIntel => &mut self.found_in_threat_intel,
            SourceKind::CodeRepo => &mut self.found_in_code_repo,
            SourceKind::WebGateway => &mut self.found_in_gateway,
            SourceKind::TorRepository => &mut self.found_in_tor_repo,
        };
        !std::mem::replace(flag, true)
    }

    /// Sources that reported this address.
    pub fn sources(&self) -> Vec<SourceKind> {
        SourceKind::ALL.into_iter().filter(|k| self.found_in(*k)).collect()
    }
}

/// What a `record_discovery` call changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RecordOutcome {
    /// A new (address, source) discovery row was inserted.
    pub new_discovery_row: bool,
    /// The address had never been seen by any source before this call.
    pub new_address: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum CatalogEvent {
    Discovery { row: DiscoveryCatalogRow },
    Downloaded { address: OnionAddress, at: DateTime<Utc>, day: DayKey },
    Unmarked { address: OnionAddress },
    Status { address: OnionAddress, status: FetchStatus, at: DateTime<Utc> },
}

#[derive(Debug, Default)]
struct State {
    discoveries: Vec<DiscoveryCatalogRow>,
    discovery_index: HashSet<(String, SourceKind)>,
    last_ts_by_source: HashMap<SourceKind, DateTime<Utc>>,
    downloads: BTreeMap<String, DownloadCatalogRow>,
}

impl State {
    fn apply(&mut self, event: &CatalogEvent) -> Result<bool, StoreError> {
        match event {
            CatalogEvent::Discovery { row } => {
                let label = row.address.label().to_string();
                let dl = self
                    .downloads
                    .entry(label.clone())
                    .or_insert_with(|| DownloadCatalogRow::new(row.address.clone(), row.identification_timestamp));
                dl.set_found(row.source);
                if self.discovery_index.insert((label, row.source)) {
                    self.last_ts_by_source.insert(row.source, row.identification_timestamp);
                    self.discoveries.push(row.clone());
                    Ok(true)
                } else {
                    Ok(false)
                }
            }
            CatalogEvent::Downloaded { address, at, day } => {
                let row = self.row_mut(address)?;
                if row.downloaded {
                    return Ok(false);
                }
                row.downloaded = true;
                row.downloaded_timestamp = Some(*at);
                row.object_day = Some(*day);
                Ok(true)
            }
            CatalogEvent::Unmarked { address } => {
                let row = self.row_mut(address)?;
                let was = row.downloaded;
                row.downloaded = false;
                row.downloaded_timestamp = None;
                row.object_day = None;
                Ok(was)
            }
            CatalogEvent::Status { address, status, at } => {
                let row = self.row_mut(address)?;
                row.last_status = Some(*status);
                row.last_attempt = Some(*at);
                row.attempts += 1;
                Ok(true)
            }
        }
    }

    fn row_mut(&mut self, address: &OnionAddress) -> Result<&mut DownloadCatalogRow, StoreError> {
        self.downloads
            .get_mut(address.label())
            .ok_or_else(|| StoreError::UnknownRow(address.hostname()))
    }
}

/// The discovery and download catalogs.
///
/// All mutations happen under one lock, which makes check-and-mark operations
/// atomic for concurrent connectors and download workers. When opened on a
/// file, every applied mutation is appended to a JSON-lines log that is
/// replayed on the next open.
#[derive(Debug)]
pub struct Catalogs {
    state: Mutex<State>,
    log: Option<Mutex<File>>,
}

impl Catalogs {
    pub fn in_memory() -> Self {
        Self { state: Mutex::new(State::default()), log: None }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| StoreError::io(parent, e))?;
        }
        let mut state = State::default();
        if path.exists() {
            let f = File::open(path).map_err(|e| StoreError::io(path, e))?;
            for (n, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| StoreError::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CatalogEvent>(&line) {
                    Ok(ev) => {
                        state.apply(&ev)?;
                    }
                    // a torn final line from a crash mid-append is dropped
                    Err(e) if e.is_eof() => break,
                    Err(e) => return Err(StoreError::Corrupt(format!("line {}: {e}", n + 1))),
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| StoreError::io(path, e))?;
        Ok(Self { state: Mutex::new(state), log: Some(Mutex::new(file)) })
    }

    fn commit(&self, state: &mut State, event: CatalogEvent) -> Result<bool, StoreError> {
        let changed = state.apply(&event)?;
        if changed {
            if let Some(log) = &self.log {
                let mut line = serde_json::to_string(&event).expect("catalog events serialize");
                line.push('\n');
                let mut f = log.lock();
                f.write_all(line.as_bytes())
                    .and_then(|_| f.flush())
                    .map_err(|e| StoreError::io("catalog log", e))?;
            }
        }
        Ok(changed)
    }

    /// Records a sighting. Idempotent per (address, source); always sets the
    /// source flag on the download row, creating the row if needed.
    ///
    /// Timestamps are clamped so they never go backwards within a source.
    pub fn record_discovery(&self, discovery: &Discovery) -> Result<RecordOutcome, StoreError> {
        let mut state = self.state.lock();
        let label = discovery.address.label();
        let new_address = !state.downloads.contains_key(label);
        if !new_address && state.discovery_index.contains(&(label.to_string(), discovery.source)) {
            return Ok(RecordOutcome::default());
        }
        let mut ts = discovery.discovered_at;
        if let Some(last) = state.last_ts_by_source.get(&discovery.source) {
            ts = ts.max(*last);
        }
        let row = DiscoveryCatalogRow {
            address: discovery.address.clone(),
            advertiser: discovery.advertiser.clone(),
            identification_timestamp: ts,
            source: discovery.source,
        };
        let new_discovery_row = self.commit(&mut state, CatalogEvent::Discovery { row })?;
        Ok(RecordOutcome { new_discovery_row, new_address })
    }

    /// Compare-and-set `downloaded` false→true. Returns true iff this call made
    /// the transition.
    pub fn catalog_mark_downloaded(
        &self,
        address: &OnionAddress,
        at: DateTime<Utc>,
        day: DayKey,
    ) -> Result<bool, StoreError> {
        let mut state = self.state.lock();
        self.commit(&mut state, CatalogEvent::Downloaded { address: address.clone(), at, day })
    }

    /// Resets a row to not-downloaded; used by crash recovery.
    pub fn unmark_downloaded(&self, address: &OnionAddress) -> Result<bool, StoreError> {
        let mut state = self.state.lock();
        self.commit(&mut state, CatalogEvent::Unmarked { address: address.clone() })
    }

    pub fn record_fetch_status(
        &self,
        address: &OnionAddress,
        status: FetchStatus,
        at: DateTime<Utc>,
    ) -> Result<(), StoreError> {
        let mut state = self.state.lock();
        self.commit(&mut state, CatalogEvent::Status { address: address.clone(), status, at })?;
        Ok(())
    }

    pub fn is_downloaded(&self, address: &OnionAddress) -> bool {
        self.state.lock().downloads.get(address.label()).is_some_and(|r| r.downloaded)
    }

    pub fn download_row(&self, address: &OnionAddress) -> Option<DownloadCatalogRow> {
        self.state.lock().downloads.get(address.label()).cloned()
    }

    /// All download rows, ordered by label.
    pub fn download_rows(&self) -> Vec<DownloadCatalogRow> {
        self.state.lock().downloads.values().cloned().collect()
    }

    /// All discovery rows in insertion order.
    pub fn discovery_rows(&self) -> Vec<DiscoveryCatalogRow> {
        self.state.lock().discoveries.clone()
    }

    pub fn downloaded_count(&self) -> usize {
        self.state.lock().downloads.values().filter(|r| r.downloaded).count()
    }

    pub fn address_count(&self) -> usize {
        self.state.lock().downloads.len()
    }
}

/// Differences between the download catalog and the `onions` bucket.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReconcileReport {
    /// Stored pages whose row is not marked downloaded.
    pub orphan_objects: Vec<ObjectKey>,
    /// Rows marked downloaded whose page is missing.
    pub missing_objects: Vec<OnionAddress>,
    /// Pages whose file name is not a known address.
    pub unknown_objects: Vec<ObjectKey>,
}

impl ReconcileReport {
    pub fn is_consistent(&self) -> bool {
        self.orphan_objects.is_empty() && self.missing_objects.is_empty() && self.unknown_objects.is_empty()
    }
}

/// Compares the catalog against stored pages. With `repair`, orphan pages get
/// their row marked (the page write completed before a crash) and rows with
/// missing pages are reset so the address is fetched again.
pub fn reconcile(
    catalogs: &Catalogs,
    store: &dyn ObjectStore,
    repair: bool,
) -> Result<ReconcileReport, StoreError> {
    let mut report = ReconcileReport::default();
    let mut stored: HashMap<String, ObjectKey> = HashMap::new();
    for day in store.list_days(Bucket::Onions)? {
        for key in store.list_by_date(Bucket::Onions, day)? {
            match key.name.strip_suffix(".html") {
                Some(label) => {
                    stored.insert(label.to_string(), key);
                }
                None => report.unknown_objects.push(key),
            }
        }
    }
    let rows = catalogs.download_rows();
    let by_label: HashMap<&str, &DownloadCatalogRow> =
        rows.iter().map(|r| (r.address.label(), r)).collect();

    for row in &rows {
        if !row.downloaded {
            continue;
        }
        let present = match row.object_day {
            Some(day) => store.exists(&ObjectKey::new(
                Bucket::Onions,
                day,
                page_object_name(row.address.label()),
            ))?,
            None => stored.contains_key(row.address.label()),
        };
        if !present {
            report.missing_objects.push(row.address.clone());
        }
    }
    let mut labels: Vec<&String> = stored.keys().collect();
    labels.sort();
    for label in labels {
        let key = &stored[label];
        match by_label.get(label.as_str()) {
            Some(row) if row.downloaded => {}
            Some(_) => report.orphan_objects.push(key.clone()),
            None => report.unknown_objects.push(key.clone()),
        }
    }

    if repair {
        for key in &report.orphan_objects {
            let row = by_label[key.name.trim_end_matches(".html")];
            catalogs.catalog_mark_downloaded(&row.address, key.day.end_of_day(), key.day)?;
        }
        for addr in &report.missing_objects {
            catalogs.unmark_downloaded(addr)?;
        }
    }
    Ok(report)
}
