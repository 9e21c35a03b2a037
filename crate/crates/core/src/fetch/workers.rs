use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use log::{debug, warn};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{fetch_page, FetchQueue, PageTransport, ProxyPool, ProxyState};
use crate::store::{page_object_name, Bucket, Catalogs, ObjectStore, StoreError};
use crate::types::{DayKey, FetchStatus};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkerConfig {
    pub workers: usize,
    pub timeout: Duration,
    pub max_attempts: u32,
    pub backoff: Duration,
    /// Sleep between polls of an empty queue.
    pub idle_poll: Duration,
    /// Return once the queue has no outstanding tasks instead of waiting for shutdown.
    pub drain: bool,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        Self {
            workers: 10,
            timeout: Duration::from_secs(60),
            max_attempts: 3,
            backoff: Duration::from_secs(30),
            idle_poll: Duration::from_millis(200),
            drain: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerReport {
    pub stored: usize,
    /// Tasks dropped because the address was already downloaded or being fetched.
    pub skipped: usize,
    pub retried: usize,
    /// Terminal status per completed task.
    pub statuses: BTreeMap<FetchStatus, usize>,
    /// Worker indices that used each proxy.
    pub proxy_workers: BTreeMap<String, BTreeSet<usize>>,
}

struct Shared<'a> {
    queue: &'a FetchQueue,
    pool: &'a ProxyPool,
    store: &'a dyn ObjectStore,
    catalogs: &'a Catalogs,
    transport: &'a dyn PageTransport,
    cfg: &'a WorkerConfig,
    shutdown: &'a AtomicBool,
    inflight: Mutex<HashSet<String>>,
    report: Mutex<WorkerReport>,
}

/// Runs `cfg.workers` download workers until `shutdown` is set (or, with
/// `cfg.drain`, until the queue is empty).
///
/// Pages are written to the `onions` bucket before the catalog row is marked,
/// so a crash in between leaves an orphan object that
/// [`reconcile`](crate::store::reconcile) repairs, never a marked row without a page.
pub fn run_download_workers(
    queue: &FetchQueue,
    pool: &ProxyPool,
    store: &dyn ObjectStore,
    catalogs: &Catalogs,
    transport: &dyn PageTransport,
    cfg: &WorkerConfig,
    shutdown: &AtomicBool,
) -> Result<WorkerReport, StoreError> {
    assert!(cfg.workers >= 1, "at least one worker required");
    let shared = Shared {
        queue,
        pool,
        store,
        catalogs,
        transport,
        cfg,
        shutdown,
        inflight: Mutex::new(HashSet::new()),
        report: Mutex::new(WorkerReport::default()),
    };
    let results: Vec<Result<(), StoreError>> = std::thread::scope(|s| {
        let handles: Vec<_> =
            (0..cfg.workers).map(|i| s.spawn({ let shared = &shared; move || worker_loop(i, shared) })).collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    for r in results {
        r?;
    }
    Ok(shared.report.into_inner())
}

fn worker_loop(index: usize, sh: &Shared<'_>) -> Result<(), StoreError> {
    let proxy = sh.pool.for_worker(index);
    while !sh.shutdown.load(Ordering::Relaxed) {
        let Some(lease) = sh.queue.claim() else {
            if sh.cfg.drain && sh.queue.is_idle() {
                return Ok(());
            }
            std::thread::sleep(sh.cfg.idle_poll);
            continue;
        };
        let address = lease.task.address.clone();
        let label = address.label().to_string();

        if sh.catalogs.is_downloaded(&address) || !sh.inflight.lock().insert(label.clone()) {
            sh.queue.ack(lease.id);
            sh.report.lock().skipped += 1;
            continue;
        }
        let outcome = process(index, sh, &lease.task, proxy);
        sh.inflight.lock().remove(&label);
        match outcome {
            Ok(Some(status)) if status.is_transient() && lease.task.attempts + 1 < sh.cfg.max_attempts => {
                debug!("retrying {address} after {status}");
                sh.queue.retry(lease.id, sh.cfg.backoff);
                sh.report.lock().retried += 1;
            }
            Ok(Some(status)) => {
                sh.queue.ack(lease.id);
                *sh.report.lock().statuses.entry(status).or_default() += 1;
            }
            Ok(None) => {
                sh.queue.ack(lease.id);
                sh.report.lock().skipped += 1;
            }
            Err(e) => {
                warn!("worker {index}: storage failure on {address}: {e}");
                sh.shutdown.store(true, Ordering::Relaxed);
                return Err(e);
            }
        }
    }
    Ok(())
}

fn process(
    index: usize,
    sh: &Shared<'_>,
    task: &super::FetchTask,
    proxy: &super::ProxyEndpoint,
) -> Result<Option<FetchStatus>, StoreError> {
    let result = fetch_page(sh.transport, &task.address, proxy, sh.cfg.timeout);
    sh.report.lock().proxy_workers.entry(proxy.id()).or_default().insert(index);
    let proxy_state = if result.status == FetchStatus::Unreachable { ProxyState::Down } else { ProxyState::Up };
    sh.pool.record(proxy, proxy_state, result.fetched_at);

    sh.catalogs.record_fetch_status(&task.address, result.status, result.fetched_at)?;
    if let Some(body) = &result.body {
        let day = DayKey::of(result.fetched_at);
        sh.store.put_object(Bucket::Onions, day, &page_object_name(task.address.label()), body)?;
        if sh.catalogs.catalog_mark_downloaded(&task.address, result.fetched_at, day)? {
            sh.report.lock().stored += 1;
        } else {
            // another delivery won the race; the object it wrote has the same key
            return Ok(None);
        }
    }
    Ok(Some(result.status))
}
