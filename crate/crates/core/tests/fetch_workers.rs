use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use chrono::Utc;
use parking_lot::Mutex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use onionscope::fetch::{
    fetch_page, run_download_workers, FetchQueue, FetchTask, PageTransport, ProxyEndpoint,
    ProxyPool, Socks5Transport, TransportError, WorkerConfig,
};
use onionscope::store::{
    reconcile, Bucket, Catalogs, MemObjectStore, ObjectKey, ObjectStore, StoreError,
};
use onionscope::{DayKey, Discovery, FetchStatus, OnionAddress, SourceKind};

fn addr(i: u32) -> OnionAddress {
    let mut pk = [0u8; 32];
    pk[..4].copy_from_slice(&i.to_le_bytes());
    pk[31] = 0x5a;
    OnionAddress::from_pubkey(pk)
}

fn discover(cat: &Catalogs, q: &FetchQueue, a: &OnionAddress) {
    let d = Discovery {
        address: a.clone(),
        source: SourceKind::ThreatIntel,
        advertiser: "feed".into(),
        discovered_at: Utc::now() - chrono::Duration::seconds(5),
    };
    if cat.record_discovery(&d).unwrap().new_address {
        q.push(FetchTask::new(a.clone(), d.discovered_at));
    }
}

/// Serves `<html>label</html>` for every address, with optional per-call jitter.
struct FakeTransport {
    calls: AtomicUsize,
    jitter: bool,
}

impl PageTransport for FakeTransport {
    fn get_root(
        &self,
        address: &OnionAddress,
        _proxy: &ProxyEndpoint,
        _timeout: Duration,
    ) -> Result<Vec<u8>, TransportError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if self.jitter {
            std::thread::sleep(Duration::from_micros((n as u64 * 7919) % 900));
        }
        Ok(format!("<html><body>{}</body></html>", address.label()).into_bytes())
    }
}

/// Counts writes so exactly-once persistence can be asserted.
#[derive(Default)]
struct CountingStore {
    inner: MemObjectStore,
    puts: Mutex<HashMap<String, usize>>,
}

impl ObjectStore for CountingStore {
    fn put_object(&self, b: Bucket, d: DayKey, n: &str, bytes: &[u8]) -> Result<ObjectKey, StoreError> {
        *self.puts.lock().entry(n.to_string()).or_default() += 1;
        self.inner.put_object(b, d, n, bytes)
    }
    fn get_object(&self, key: &ObjectKey) -> Result<Vec<u8>, StoreError> {
        self.inner.get_object(key)
    }
    fn exists(&self, key: &ObjectKey) -> Result<bool, StoreError> {
        self.inner.exists(key)
    }
    fn delete_object(&self, key: &ObjectKey) -> Result<(), StoreError> {
        self.inner.delete_object(key)
    }
    fn list_by_date(&self, b: Bucket, d: DayKey) -> Result<Vec<ObjectKey>, StoreError> {
        self.inner.list_by_date(b, d)
    }
    fn list_days(&self, b: Bucket) -> Result<Vec<DayKey>, StoreError> {
        self.inner.list_days(b)
    }
}

fn pool(n: u16) -> ProxyPool {
    ProxyPool::new((0..n).map(|i| ProxyEndpoint::new("127.0.0.1", 9050 + i)).collect()).unwrap()
}

fn drain_cfg() -> WorkerConfig {
    WorkerConfig { idle_poll: Duration::from_millis(2), drain: true, backoff: Duration::ZERO, ..Default::default() }
}

fn total_objects(store: &dyn ObjectStore) -> usize {
    store
        .list_days(Bucket::Onions)
        .unwrap()
        .into_iter()
        .map(|d| store.list_by_date(Bucket::Onions, d).unwrap().len())
        .sum()
}

#[test]
fn hundred_tasks_hundred_objects() {
    let cat = Catalogs::in_memory();
    let q = FetchQueue::default();
    for i in 0..100 {
        discover(&cat, &q, &addr(i));
    }
    let store = CountingStore::default();
    let t = FakeTransport { calls: AtomicUsize::new(0), jitter: true };
    let stop = AtomicBool::new(false);
    let report = run_download_workers(&q, &pool(5), &store, &cat, &t, &drain_cfg(), &stop).unwrap();
    assert_eq!(report.stored, 100);
    assert_eq!(total_objects(&store), 100);
    assert_eq!(cat.downloaded_count(), 100);
    assert!(reconcile(&cat, &store, false).unwrap().is_consistent());
}

#[test]
fn ten_workers_five_proxies() {
    let cat = Catalogs::in_memory();
    let q = FetchQueue::default();
    for i in 0..200 {
        discover(&cat, &q, &addr(i));
    }
    let store = MemObjectStore::new();
    let t = FakeTransport { calls: AtomicUsize::new(0), jitter: true };
    let stop = AtomicBool::new(false);
    let report = run_download_workers(&q, &pool(5), &store, &cat, &t, &drain_cfg(), &stop).unwrap();
    assert_eq!(report.stored, 200);
    let mut seen_workers = BTreeSet::new();
    for workers in report.proxy_workers.values() {
        assert!(workers.len() <= 2, "{workers:?}");
        seen_workers.extend(workers.iter().copied());
    }
    // each proxy only ever served workers i and i+5
    for (proxy, workers) in &report.proxy_workers {
        let port: u16 = proxy.rsplit(':').next().unwrap().parse().unwrap();
        assert!(workers.iter().all(|w| w % 5 == (port - 9050) as usize));
    }
    assert!(report.proxy_workers.len() <= 5);
}

#[test]
fn duplicate_delivery_single_object() {
    let cat = Catalogs::in_memory();
    let q = FetchQueue::default();
    let a = addr(7);
    discover(&cat, &q, &a);
    q.push(FetchTask::new(a.clone(), Utc::now()));
    let store = CountingStore::default();
    let t = FakeTransport { calls: AtomicUsize::new(0), jitter: false };
    let stop = AtomicBool::new(false);
    let report = run_download_workers(&q, &pool(1), &store, &cat, &t, &drain_cfg(), &stop).unwrap();
    assert_eq!(report.stored, 1);
    assert_eq!(report.skipped, 1);
    assert_eq!(total_objects(&store), 1);
    assert_eq!(store.puts.lock().values().copied().collect::<Vec<_>>(), [1]);
}

#[test]
fn randomized_duplicates_persist_exactly_once() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for round in 0..5 {
        let cat = Catalogs::in_memory();
        let q = FetchQueue::default();
        let n = 60;
        let mut tasks = Vec::new();
        for i in 0..n {
            let a = addr(1000 * round + i);
            let d = Discovery {
                address: a.clone(),
                source: SourceKind::CodeRepo,
                advertiser: "x".into(),
                discovered_at: Utc::now() - chrono::Duration::seconds(1),
            };
            cat.record_discovery(&d).unwrap();
            for _ in 0..rng.gen_range(1..=4) {
                tasks.push(FetchTask::new(a.clone(), d.discovered_at));
            }
        }
        tasks.shuffle(&mut rng);
        for t in tasks {
            q.push(t);
        }
        let store = CountingStore::default();
        let t = FakeTransport { calls: AtomicUsize::new(0), jitter: true };
        let stop = AtomicBool::new(false);
        let report = run_download_workers(&q, &pool(5), &store, &cat, &t, &drain_cfg(), &stop).unwrap();
        assert_eq!(report.stored, n as usize);
        assert_eq!(total_objects(&store), n as usize);
        assert!(store.puts.lock().values().all(|&c| c == 1));
    }
}

#[test]
fn crashed_worker_lease_expires_and_is_refetched() {
    let cat = Catalogs::in_memory();
    let q = FetchQueue::new(Duration::from_secs(300));
    let a = addr(99);
    discover(&cat, &q, &a);

    // a worker claims and dies without acking
    let t0 = Instant::now();
    let lost = q.claim_at(t0).unwrap();
    assert!(q.claim_at(t0 + Duration::from_secs(299)).is_none());
    let again = q.claim_at(t0 + Duration::from_secs(301)).unwrap();
    assert_eq!(again.task.address, lost.task.address);
    assert!(!q.ack(lost.id), "expired lease must not ack");
    q.retry_at(again.id, Duration::ZERO, t0 + Duration::from_secs(301));

    let store = MemObjectStore::new();
    let t = FakeTransport { calls: AtomicUsize::new(0), jitter: false };
    let stop = AtomicBool::new(false);
    let report = run_download_workers(&q, &pool(2), &store, &cat, &t, &drain_cfg(), &stop).unwrap();
    assert_eq!(report.stored, 1);
    assert!(cat.is_downloaded(&a));
}

struct FlakyTransport {
    fails: Mutex<HashMap<String, u32>>,
}

impl PageTransport for FlakyTransport {
    fn get_root(&self, a: &OnionAddress, _p: &ProxyEndpoint, _t: Duration) -> Result<Vec<u8>, TransportError> {
        let mut f = self.fails.lock();
        let left = f.entry(a.label().to_string()).or_insert(0);
        if *left > 0 {
            *left -= 1;
            return Err(TransportError::Timeout);
        }
        Ok(b"<p>back</p>".to_vec())
    }
}

#[test]
fn transient_failures_retry_up_to_max_attempts() {
    let cat = Catalogs::in_memory();
    let q = FetchQueue::default();
    let (ok, dead) = (addr(1), addr(2));
    discover(&cat, &q, &ok);
    discover(&cat, &q, &dead);
    let t = FlakyTransport {
        fails: Mutex::new(HashMap::from([(ok.label().to_string(), 2), (dead.label().to_string(), 10)])),
    };
    let store = MemObjectStore::new();
    let stop = AtomicBool::new(false);
    let report = run_download_workers(&q, &pool(1), &store, &cat, &t, &drain_cfg(), &stop).unwrap();
    assert_eq!(report.stored, 1);
    assert_eq!(report.retried, 4);
    assert_eq!(report.statuses.get(&FetchStatus::Timeout), Some(&1));
    assert_eq!(cat.download_row(&dead).unwrap().attempts, 3);
    assert!(!cat.is_downloaded(&dead));
}

// ---- stub SOCKS5 proxy ----

#[derive(Clone, Copy)]
enum Behavior {
    Page,
    EmptyPage,
    Hang,
    HostUnreachable,
}

fn read_exact(s: &mut TcpStream, n: usize) -> std::io::Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    s.read_exact(&mut buf)?;
    Ok(buf)
}

fn handle(mut s: TcpStream, routes: &HashMap<String, Behavior>) -> std::io::Result<()> {
    let hdr = read_exact(&mut s, 2)?;
    read_exact(&mut s, hdr[1] as usize)?;
    s.write_all(&[5, 0])?;
    let req = read_exact(&mut s, 4)?;
    assert_eq!(req[3], 3, "expected proxy-side resolution of a domain name");
    let len = read_exact(&mut s, 1)?[0] as usize;
    let host = String::from_utf8(read_exact(&mut s, len)?).unwrap();
    read_exact(&mut s, 2)?;
    let behavior = routes.get(&host).copied().unwrap_or(Behavior::HostUnreachable);
    if let Behavior::HostUnreachable = behavior {
        s.write_all(&[5, 4, 0, 1, 0, 0, 0, 0, 0, 0])?;
        return Ok(());
    }
    s.write_all(&[5, 0, 0, 1, 127, 0, 0, 1, 0, 80])?;
    let mut req = Vec::new();
    let mut byte = [0u8; 1];
    while !req.ends_with(b"\r\n\r\n") {
        s.read_exact(&mut byte)?;
        req.push(byte[0]);
    }
    let body: Vec<u8> = match behavior {
        Behavior::Page => {
            let mut b = b"<html><body>".to_vec();
            b.resize(2048 - 14, b'x');
            b.extend_from_slice(b"</body></html>");
            b
        }
        Behavior::EmptyPage => Vec::new(),
        Behavior::Hang => {
            std::thread::sleep(Duration::from_secs(3));
            return Ok(());
        }
        Behavior::HostUnreachable => unreachable!(),
    };
    write!(s, "HTTP/1.1 200 OK\r\nContent-Length: {}\r\nConnection: close\r\n\r\n", body.len())?;
    s.write_all(&body)
}

fn spawn_stub(routes: HashMap<String, Behavior>) -> ProxyEndpoint {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    std::thread::spawn(move || {
        for conn in listener.incoming() {
            let Ok(conn) = conn else { continue };
            let routes = routes.clone();
            std::thread::spawn(move || {
                let _ = handle(conn, &routes);
            });
        }
    });
    ProxyEndpoint::new("127.0.0.1", port)
}

#[test]
fn socks5_stub_statuses() {
    let (page, empty, hang, gone) = (addr(1), addr(2), addr(3), addr(4));
    let proxy = spawn_stub(HashMap::from([
        (page.hostname(), Behavior::Page),
        (empty.hostname(), Behavior::EmptyPage),
        (hang.hostname(), Behavior::Hang),
    ]));
    let t = Socks5Transport::new();
    let timeout = Duration::from_millis(500);

    let r = fetch_page(&t, &page, &proxy, timeout);
    assert_eq!(r.status, FetchStatus::Ok);
    assert_eq!(r.body.as_ref().unwrap().len(), 2048);
    assert_eq!(r.proxy_id, proxy.id());

    assert_eq!(fetch_page(&t, &empty, &proxy, timeout).status, FetchStatus::Empty);

    let started = Instant::now();
    assert_eq!(fetch_page(&t, &hang, &proxy, timeout).status, FetchStatus::Timeout);
    assert!(started.elapsed() < Duration::from_secs(2));

    let r = fetch_page(&t, &gone, &proxy, timeout);
    assert_eq!(r.status, FetchStatus::Unreachable);
    assert!(r.body.is_none());
}

#[test]
fn socks5_stub_end_to_end_pool() {
    let addrs: Vec<_> = (10..30).map(addr).collect();
    let routes: HashMap<_, _> = addrs.iter().map(|a| (a.hostname(), Behavior::Page)).collect();
    let proxies: Vec<_> = (0..3).map(|_| spawn_stub(routes.clone())).collect();
    let cat = Catalogs::in_memory();
    let q = FetchQueue::default();
    for a in &addrs {
        discover(&cat, &q, a);
    }
    let dir = tempfile::tempdir().unwrap();
    let store = onionscope::store::FsObjectStore::open(dir.path()).unwrap();
    let cfg = WorkerConfig { workers: 6, timeout: Duration::from_secs(5), ..drain_cfg() };
    let stop = AtomicBool::new(false);
    let report = run_download_workers(
        &q,
        &ProxyPool::new(proxies).unwrap(),
        &store,
        &cat,
        &Socks5Transport::new(),
        &cfg,
        &stop,
    )
    .unwrap();
    assert_eq!(report.stored, 20);
    assert_eq!(total_objects(&store), 20);
    assert!(reconcile(&cat, &store, false).unwrap().is_consistent());
}

