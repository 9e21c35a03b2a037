//! Date-partitioned object store and the discovery/download catalogs.
//!
//! Keys follow `<bucket>/<yyyy/mm/dd>/<name>`. The filesystem backend writes
//! each object to a hidden temporary file in the target directory and renames
//! it into place, so readers never observe a partial object.

mod catalog;

pub use catalog::{
    reconcile, Catalogs, DiscoveryCatalogRow, DownloadCatalogRow, RecordOutcome, ReconcileReport,
};

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::DayKey;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("object not found: {0}")]
    NotFound(String),
    #[error("invalid object name `{0}`")]
    InvalidName(String),
    #[error("no catalog row for {0}")]
    UnknownRow(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt catalog record: {0}")]
    Corrupt(String),
}

impl StoreError {
    fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StoreError::Io { path: path.into(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Onions,
    Datasets,
    Models,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::Onions, Bucket::Datasets, Bucket::Models];

    pub fn as_str(self) -> &'static str {
        match self {
            Bucket::Onions => "onions",
            Bucket::Datasets => "datasets",
            Bucket::Models => "models",
        }
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Bucket {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Bucket::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| StoreError::InvalidName(s.to_string()))
    }
}

/// Fully qualified object key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObjectKey {
    pub bucket: Bucket,
    pub day: DayKey,
    /// Relative name, may contain `/` separators (e.g. `reports/summary.json`).
    pub name: String,
}

impl ObjectKey {
    pub fn new(bucket: Bucket, day: DayKey, name: impl Into<String>) -> Self {
        Self { bucket, day, name: name.into() }
    }
}

impl fmt::Display for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.bucket, self.day, self.name)
    }
}

impl FromStr for ObjectKey {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.splitn(5, '/');
        let invalid = || StoreError::InvalidName(s.to_string());
        let bucket: Bucket = parts.next().ok_or_else(invalid)?.parse()?;
        let y = parts.next().ok_or_else(invalid)?;
        let m = parts.next().ok_or_else(invalid)?;
        let d = parts.next().ok_or_else(invalid)?;
        let name = parts.next().ok_or_else(invalid)?;
        let day: DayKey = format!("{y}/{m}/{d}").parse().map_err(|_| invalid())?;
        validate_name(name)?;
        Ok(ObjectKey::new(bucket, day, name))
    }
}

fn validate_name(name: &str) -> Result<(), StoreError> {
    let ok = !name.is_empty()
        && !name.starts_with('/')
        && name
            .split('/')
            .all(|seg| !seg.is_empty() && seg != "." && seg != ".." && !seg.starts_with('.'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidName(name.to_string()))
    }
}

/// Object storage contract shared by the pipeline stages.
pub trait ObjectStore: Send + Sync {
    /// Writes an object, atomically replacing any previous version.
    fn put_object(
        &self,
        bucket: Bucket,
        day: DayKey,
        name: &str,
        bytes: &[u8],
    ) -> Result<ObjectKey, StoreError>;

    fn get_object(&self, key: &ObjectKey) -> Result<Vec<u8>, StoreError>;

    fn exists(&self, key: &ObjectKey) -> Result<bool, StoreError>;

    fn delete_object(&self, key: &ObjectKey) -> Result<(), StoreError>;

    /// Every key under `<bucket>/<day>/`, sorted lexicographically by name.
    fn list_by_date(&self, bucket: Bucket, day: DayKey) -> Result<Vec<ObjectKey>, StoreError>;

    /// Days that hold at least one object in `bucket`, ascending.
    fn list_days(&self, bucket: Bucket) -> Result<Vec<DayKey>, StoreError>;
}

/// Filesystem backend rooted at a directory.
#[derive(Debug)]
pub struct FsObjectStore {
    root: PathBuf,
    tmp_counter: AtomicU64,
}

impl FsObjectStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for b in Bucket::ALL {
            let dir = root.join(b.as_str());
            fs::create_dir_all(&dir).map_err(|e| StoreError::io(&dir, e))?;
        }
        Ok(Self { root, tmp_counter: AtomicU64::new(0) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn day_dir(&self, bucket: Bucket, day: DayKey) -> PathBuf {
        self.root.join(bucket.as_str()).join(day.to_string())
    }

    pub fn path_of(&self, key: &ObjectKey) -> PathBuf {
        let mut p = self.day_dir(key.bucket, key.day);
        for seg in key.name.split('/') {
            p.push(seg);
        }
        p
    }
}

fn walk_files(dir: &Path, prefix: &str, out: &mut Vec<String>) -> Result<(), StoreError> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(StoreError::io(dir, e)),
    };
    for entry in entries {
        let entry = entry.map_err(|e| StoreError::io(dir, e))?;
        let fname = entry.file_name().to_string_lossy().into_owned();
        // temporaries and other hidden files are never objects
        if fname.starts_with('.') {
            continue;
        }
        let rel = if prefix.is_empty() { fname.clone() } else { format!("{prefix}/{fname}") };
        let ft = entry.file_type().map_err(|e| StoreError::io(entry.path(), e))?;
        if ft.is_dir() {
            walk_files(&entry.path(), &rel, out)?;
        } else {
            out.push(rel);
        }
    }
    Ok(())
}

impl ObjectStore for FsObjectStore {
    fn put_object(
        &self,
        bucket: Bucket,
        day: DayKey,
        name: &str,
        bytes: &[u8],
    ) -> Result<ObjectKey, StoreError> {
        validate_name(name)?;
        let key = ObjectKey::new(bucket, day, name);
        let path = self.path_of(&key);
        let dir = path.parent().expect("object path has a parent").to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| StoreError::io(&dir, e))?;
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = dir.join(format!(".tmp-{}-{n}", std::process::id()));
        let mut f = fs::File::create(&tmp).map_err(|e| StoreError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| StoreError::io(&tmp, e))?;
        f.sync_all().map_err(|e| StoreError::io(&tmp, e))?;
        drop(f);
        fs::rename(&tmp, &path).map_err(|e| StoreError::io(&path, e))?;
        Ok(key)
    }

    fn get_object(&self, key: &ObjectKey) -> Result<Vec<u8>, StoreError> {
        let path = self.path_of(key);
        fs::read(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                StoreError::NotFound(key.to_string())
            } else {
                StoreError::io(&path, e)
            }
        })
    }

    fn exists(&self, key: &ObjectKey) -> Result<bool, StoreError> {
        Ok(self.path_of(key).is_file())
    }

    fn delete_object(&self, key: &ObjectKey) -> Result<(), StoreError> {
        let path = self.path_of(key);
        match fs::remove_file(&path) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(StoreError::io(&path, e)),
        }
    }

    fn list_by_date(&self, bucket: Bucket, day: DayKey) -> Result<Vec<ObjectKey>, StoreError> {
        let mut names = Vec::new();
        walk_files(&self.day_dir(bucket, day), "", &mut names)?;
        names.sort();
        Ok(names.into_iter().map(|n| ObjectKey::new(bucket, day, n)).collect())
    }

    fn list_days(&self, bucket: Bucket) -> Result<Vec<DayKey>, StoreError> {
        let mut names = Vec::new();
        walk_files(&self.root.join(bucket.as_str()), "", &mut names)?;
        let mut days: Vec<DayKey> = names
            .iter()
            .filter_map(|n| {
                let mut it = n.splitn(4, '/');
                let (y, m, d) = (it.next()?, it.next()?, it.next()?);
                it.next()?;
                format!("{y}/{m}/{d}").parse().ok()
            })
            .collect();
        days.sort();
        days.dedup();
        Ok(days)
    }
}

/// In-memory backend, used by tests and the Python bindings.
#[derive(Debug, Default)]
pub struct MemObjectStore {
    objects: RwLock<BTreeMap<ObjectKey, Vec<u8>>>,
}

impl MemObjectStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.objects.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.read().is_empty()
    }
}

impl ObjectStore for MemObjectStore {
    fn put_object(
        &self,
        bucket: Bucket,
        day: DayKey,
        name: &str,
        bytes: &[u8],
    ) -> Result<ObjectKey, StoreError> {
        validate_name(name)?;
        let key = ObjectKey::new(bucket, day, name);
        self.objects.write().insert(key.clone(), bytes.to_vec());
        Ok(key)
    }

    fn get_object(&self, key: &ObjectKey) -> Result<Vec<u8>, StoreError> {
        self.objects
            .read()
            .get(key)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(key.to_string()))
    }

    fn exists(&self, key: &ObjectKey) -> Result<bool, StoreError> {
        Ok(self.objects.read().contains_key(key))
    }

    fn delete_object(&self, key: &ObjectKey) -> Result<(), StoreError> {
        self.objects.write().remove(key);
        Ok(())
    }

    fn list_by_date(&self, bucket: Bucket, day: DayKey) -> Result<Vec<ObjectKey>, StoreError> {
        // BTreeMap order is (bucket, day, name), so the range is already sorted.
        let lo = ObjectKey::new(bucket, day, String::new());
        Ok(self
            .objects
            .read()
            .range(lo..)
            .take_while(|(k, _)| k.bucket == bucket && k.day == day)
            .map(|(k, _)| k.clone())
            .collect())
    }

    fn list_days(&self, bucket: Bucket) -> Result<Vec<DayKey>, StoreError> {
        let mut days: Vec<DayKey> = self
            .objects
            .read()
            .keys()
            .filter(|k| k.bucket == bucket)
            .map(|k| k.day)
            .collect();
        days.dedup();
        Ok(days)
    }
}

/// Object name used for a downloaded page.
pub fn page_object_name(label: &str) -> String {
    format!("{label}.html")
}
