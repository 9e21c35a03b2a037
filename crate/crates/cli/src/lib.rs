//! Subcommands of the `onionscope` binary.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use chrono::Utc;
use clap::{Parser, Subcommand};

use onionscope::discovery::{
    enqueue_new, run_connector, FixtureFetcher, HttpFetcher, PageFetcher, Scheduler, SourceConfig,
};
use onionscope::fetch::{run_download_workers, FetchQueue, FetchTask, ProxyPool, Socks5Transport};
use onionscope::pipeline::config::parse_endpoint;
use onionscope::pipeline::{BatchOptions, Config, Pipeline, PipelineError, Stage, StageStatus, CONFIG_ENV};
use onionscope::store::{reconcile, Catalogs, FsObjectStore};
use onionscope::DayKey;

#[derive(Debug, Parser)]
#[command(name = "onionscope", version, about = "Onion service discovery, download and daily analytics")]
pub struct Cli {
    /// Config file (TOML); falls back to $ONIONSCOPE_CONFIG, then the built-in defaults.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run discovery connectors and record new addresses.
    Discover {
        /// Run only this source, even when it is disabled in the config.
        #[arg(long)]
        source: Option<String>,
        /// Run every due source once and exit.
        #[arg(long)]
        once: bool,
    },
    /// Download every identified address not yet stored.
    Fetch {
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run the daily batch for a day.
    Batch {
        #[arg(long)]
        date: DayKey,
        /// Run this stage only, reading earlier stages' artifacts.
        #[arg(long)]
        stage: Option<Stage>,
    },
    /// Write report files for a processed day.
    Report {
        #[arg(long)]
        date: DayKey,
        /// Also write SVG plots.
        #[arg(long)]
        plots: bool,
    },
    /// Parse and check the config, then print it.
    ValidateConfig,
    /// Serve pipeline counters as `name value` lines over HTTP.
    ServeMetrics {
        /// Overrides `metrics.listen`.
        #[arg(long)]
        listen: Option<String>,
    },
}

pub fn load_config(cli: &Cli) -> Result<Config> {
    let config = Config::resolve(cli.config.as_deref())?;
    config.validate()?;
    Ok(config)
}

pub fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::ValidateConfig => {
            print!("{}", config.to_toml());
            println!("# config hash {}", config.snapshot_hash());
            Ok(())
        }
        Command::Discover { source, once } => discover(&config, source.as_deref(), once),
        Command::Fetch { workers } => fetch(&config, workers),
        Command::Batch { date, stage } => batch(&config, date, stage),
        Command::Report { date, plots } => report(&config, date, plots),
        Command::ServeMetrics { listen } => {
            let addr = listen.unwrap_or_else(|| config.metrics.listen.clone());
            let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
            log::info!("serving metrics on {addr}");
            serve_metrics(&listener, || render_metrics(&config), None)
        }
    }
}

fn open_store(config: &Config) -> Result<(FsObjectStore, Catalogs)> {
    let store = FsObjectStore::open(&config.store.root)?;
    let catalogs = Catalogs::open(config.store.catalog_path())?;
    Ok((store, catalogs))
}

fn fetcher_for(config: &Config, source: &SourceConfig) -> Result<Box<dyn PageFetcher>> {
    let d = &config.discovery;
    if let Some(dir) = &d.fixture_dir {
        return Ok(Box::new(FixtureFetcher::new(dir, &source.name)));
    }
    let proxy = d.proxy.as_deref().map(parse_endpoint).transpose()?;
    Ok(Box::new(HttpFetcher::new(proxy, Duration::from_secs_f64(d.http_timeout_secs))?))
}

fn discover(config: &Config, only: Option<&str>, once: bool) -> Result<()> {
    let (_store, catalogs) = open_store(config)?;
    let sources: Vec<SourceConfig> = match only {
        Some(name) => {
            let Some(s) = config.discovery.sources.iter().find(|s| s.name == name) else {
                bail!("no source named `{name}` in the config");
            };
            vec![SourceConfig { enabled: true, ..s.clone() }]
        }
        None => config.discovery.sources.clone(),
    };
    let queue = FetchQueue::new(Duration::from_secs_f64(config.fetch.visibility_timeout_secs));
    let mut scheduler = Scheduler::new();
    loop {
        let due: Vec<SourceConfig> = scheduler.take_due(Utc::now(), &sources).into_iter().cloned().collect();
        for src in &due {
            let fetcher = fetcher_for(config, src)?;
            let run = run_connector(src, &config.discovery.gateway_domains, fetcher.as_ref());
            let fresh = enqueue_new(&run.discoveries, &catalogs, &queue)?;
            for (url, msg) in &run.errors {
                log::warn!("{}: {url}: {msg}", src.name);
            }
            println!(
                "{}\t{}\tpages={}\tfound={}\tnew={}\terrors={}",
                src.name,
                src.kind,
                run.pages_visited,
                run.discoveries.len(),
                fresh,
                run.errors.len()
            );
            scheduler.complete(&src.name, run.started_at);
        }
        if once {
            return Ok(());
        }
        std::thread::sleep(Duration::from_secs(30));
    }
}

fn fetch(config: &Config, workers: Option<usize>) -> Result<()> {
    let (store, catalogs) = open_store(config)?;
    let fixed = reconcile(&catalogs, &store, true)?;
    if !fixed.is_consistent() {
        log::warn!(
            "reconciled catalog: {} orphan pages, {} missing pages",
            fixed.orphan_objects.len(),
            fixed.missing_objects.len()
        );
    }
    let mut cfg = config.fetch.worker_config();
    if let Some(n) = workers {
        if n == 0 {
            bail!("--workers must be at least 1");
        }
        cfg.workers = n;
    }
    cfg.drain = true;
    let queue = FetchQueue::new(Duration::from_secs_f64(config.fetch.visibility_timeout_secs));
    let mut pending = 0;
    for row in catalogs.download_rows() {
        if !row.downloaded && row.attempts < cfg.max_attempts {
            queue.push(FetchTask::new(row.address, row.first_seen));
            pending += 1;
        }
    }
    let pool = ProxyPool::new(config.fetch.proxy_endpoints()?).map_err(|_| anyhow::anyhow!("no proxies configured"))?;
    let report = run_download_workers(&queue, &pool, &store, &catalogs, &Socks5Transport::new(), &cfg, &AtomicBool::new(false))?;
    println!("queued={pending}\tstored={}\tskipped={}\tretried={}", report.stored, report.skipped, report.retried);
    for (status, n) in &report.statuses {
        println!("{status}\t{n}");
    }
    Ok(())
}

fn batch(config: &Config, day: DayKey, stage: Option<Stage>) -> Result<()> {
    let (store, catalogs) = open_store(config)?;
    let p = Pipeline::new(&store, config.clone()).with_catalogs(&catalogs).with_lock_file(config.store.lock_path());
    let manifest = match p.run_daily_batch(day, &BatchOptions { only: stage, fail_at: None }) {
        Ok(m) => m,
        Err(PipelineError::StageFailed { stage, cause, manifest }) => {
            print_stages(&manifest);
            bail!("stage {stage} failed: {cause}");
        }
        Err(e) => return Err(e.into()),
    };
    print_stages(&manifest);
    if manifest.merged {
        println!("merged {}", day.iso());
    }
    Ok(())
}

fn print_stages(m: &onionscope::pipeline::BatchManifest) {
    for s in Stage::ALL {
        let status = match m.status(s) {
            StageStatus::Pending => "pending",
            StageStatus::Ok => "ok",
            StageStatus::Failed => "failed",
        };
        println!("{s}\t{status}");
    }
}

fn report(config: &Config, day: DayKey, plots: bool) -> Result<()> {
    let (store, catalogs) = open_store(config)?;
    let p = Pipeline::new(&store, config.clone()).with_catalogs(&catalogs);
    for key in p.report(day, plots)? {
        println!("{}", store.path_of(&key).display());
    }
    Ok(())
}

pub fn render_metrics(config: &Config) -> String {
    match open_store(config) {
        Ok((store, catalogs)) => Pipeline::new(&store, config.clone())
            .with_catalogs(&catalogs)
            .metrics_text()
            .unwrap_or_else(|e| format!("# error {e}\n")),
        Err(e) => format!("# error {e}\n"),
    }
}

/// Answers each connection with the rendered metrics. Stops after
/// `max_requests` connections when given.
pub fn serve_metrics(listener: &TcpListener, render: impl Fn() -> String, max_requests: Option<usize>) -> Result<()> {
    let mut served = 0;
    for stream in listener.incoming() {
        let mut stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept: {e}");
                continue;
            }
        };
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut line = String::new();
        // request line and headers
        while reader.read_line(&mut line).map(|n| n > 0).unwrap_or(false) {
            if line == "\r\n" || line == "\n" {
                break;
            }
            line.clear();
        }
        let body = render();
        let head = format!(
            "HTTP/1.1 200 OK\r\ncontent-type: text/plain; version=0.0.4\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
            body.len()
        );
        if let Err(e) = stream.write_all(head.as_bytes()).and_then(|_| stream.write_all(body.as_bytes())) {
            log::warn!("write: {e}");
        }
        served += 1;
        if max_requests.is_some_and(|m| served >= m) {
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Read;
    use std::net::TcpStream;

    #[test]
    fn parses_subcommands() {
        let cli = Cli::try_parse_from(["onionscope", "batch", "--date", "2023-02-01", "--stage", "dedup"]).unwrap();
        match cli.command {
            Command::Batch { date, stage } => {
                assert_eq!(date.iso(), "2023-02-01");
                assert_eq!(stage, Some(Stage::Dedup));
            }
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["onionscope", "batch", "--date", "2023-02-30"]).is_err());
        assert!(Cli::try_parse_from(["onionscope", "batch", "--date", "2023-02-01", "--stage", "crawl"]).is_err());
        assert!(Cli::try_parse_from(["onionscope", "report", "--date", "2023/02/01", "--plots"]).is_ok());
    }

    #[test]
    fn metrics_endpoint_answers_plain_text() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || serve_metrics(&listener, || "a_total 3\n".to_string(), Some(1)));
        let mut s = TcpStream::connect(addr).unwrap();
        s.write_all(b"GET /metrics HTTP/1.1\r\nhost: x\r\n\r\n").unwrap();
        let mut resp = String::new();
        s.read_to_string(&mut resp).unwrap();
        server.join().unwrap().unwrap();
        assert!(resp.starts_with("HTTP/1.1 200 OK"));
        assert!(resp.ends_with("\r\n\r\na_total 3\n"));
    }
}
