use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use super::TopicsError;

pub const FALLBACK_DIM: usize = 384;

/// Turns documents into fixed-length vectors.
pub trait EmbeddingProvider: Send + Sync {
    fn model(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, TopicsError>;
}

/// Feature-hashed unigram and bigram counts, signed, L2-normalized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashingEmbedder {
    dim: usize,
    seed: u64,
    model: String,
}

impl HashingEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed, model: format!("hashing-uni-bi-{dim}") }
    }

    fn add(&self, v: &mut [f64], feature: &str) {
        let h = xxh3_64_with_seed(feature.as_bytes(), self.seed);
        let idx = (h % self.dim as u64) as usize;
        v[idx] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let words: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
        for w in &words {
            self.add(&mut v, w);
        }
        let mut buf = String::new();
        for pair in words.windows(2) {
            buf.clear();
            buf.push_str(&pair[0]);
            buf.push('\u{1}');
            buf.push_str(&pair[1]);
            self.add(&mut v, &buf);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(FALLBACK_DIM, 0)
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn model(&self) -> &str {
        &self.model
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, TopicsError> {
        use rayon::prelude::*;
        Ok(texts.par_iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Debug, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Request<'a> {
    Hello,
    Embed { id: &'a str, texts: &'a [String] },
}

#[derive(Debug, Deserialize)]
pub struct Hello {
    pub model: String,
    pub dim: usize,
}

#[derive(Debug, Deserialize)]
struct EmbedReply {
    id: String,
    #[serde(default)]
    vectors: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    dim: Option<usize>,
    #[serde(default)]
    error: Option<String>,
}

/// Line-delimited JSON client for an external embedding service.
pub struct ProtocolClient<R, W> {
    reader: R,
    writer: W,
    next_id: u64,
}

impl<R: BufRead, W: Write> ProtocolClient<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self { reader, writer, next_id: 0 }
    }

    fn send(&mut self, req: &Request<'_>) -> Result<(), TopicsError> {
        let mut line = serde_json::to_vec(req).map_err(|e| TopicsError::Protocol(e.to_string()))?;
        line.push(b'\n');
        self.writer.write_all(&line).map_err(unavailable)?;
        self.writer.flush().map_err(unavailable)
    }

    fn recv<T: serde::de::DeserializeOwned>(&mut self) -> Result<T, TopicsError> {
        let mut line = String::new();
        let n = self.reader.read_line(&mut line).map_err(unavailable)?;
        if n == 0 {
            return Err(TopicsError::ProviderUnavailable("connection closed".into()));
        }
        serde_json::from_str(&line).map_err(|e| TopicsError::Protocol(format!("{e}: {}", line.trim_end())))
    }

    pub fn hello(&mut self) -> Result<Hello, TopicsError> {
        self.send(&Request::Hello)?;
        let h: Hello = self.recv()?;
        if h.dim == 0 {
            return Err(TopicsError::Protocol("provider declared dimension 0".into()));
        }
        Ok(h)
    }

    /// One request, one response; the response must echo the request id
    /// and carry one vector of `expected_dim` values per text.
    pub fn embed(&mut self, texts: &[String], expected_dim: usize) -> Result<Vec<Vec<f64>>, TopicsError> {
        self.next_id += 1;
        let id = format!("req-{}", self.next_id);
        self.send(&Request::Embed { id: &id, texts })?;
        let reply: EmbedReply = self.recv()?;
        if reply.id != id {
            return Err(TopicsError::Protocol(format!("response id {} does not match {id}", reply.id)));
        }
        if let Some(err) = reply.error {
            return Err(TopicsError::Provider(err));
        }
        let vectors = reply.vectors.ok_or_else(|| TopicsError::Protocol("response without vectors".into()))?;
        if vectors.len() != texts.len() {
            return Err(TopicsError::Protocol(format!("{} vectors for {} texts", vectors.len(), texts.len())));
        }
        if reply.dim.is_some_and(|d| d != expected_dim)
            || vectors.iter().any(|v| v.len() != expected_dim || v.iter().any(|x| !x.is_finite()))
        {
            return Err(TopicsError::Protocol(format!("vectors do not match dimension {expected_dim}")));
        }
        Ok(vectors)
    }
}

fn unavailable(e: std::io::Error) -> TopicsError {
    TopicsError::ProviderUnavailable(e.to_string())
}

type StreamClient = ProtocolClient<Box<dyn BufRead + Send>, Box<dyn Write + Send>>;

/// Embedding provider backed by an external process or TCP service
/// speaking the line protocol.
pub struct SidecarProvider {
    client: Mutex<StreamClient>,
    model: String,
    dim: usize,
    batch_size: usize,
    _child: Option<Mutex<Child>>,
}

impl SidecarProvider {
    fn handshake(mut client: StreamClient, child: Option<Child>, batch_size: usize) -> Result<Self, TopicsError> {
        let hello = client.hello()?;
        Ok(Self {
            client: Mutex::new(client),
            model: hello.model,
            dim: hello.dim,
            batch_size: batch_size.max(1),
            _child: child.map(Mutex::new),
        })
    }

    pub fn connect(addr: impl ToSocketAddrs, timeout: Duration, batch_size: usize) -> Result<Self, TopicsError> {
        let addr = addr
            .to_socket_addrs()
            .map_err(unavailable)?
            .next()
            .ok_or_else(|| TopicsError::ProviderUnavailable("address did not resolve".into()))?;
        let stream = TcpStream::connect_timeout(&addr, timeout).map_err(unavailable)?;
        stream.set_read_timeout(Some(timeout)).map_err(unavailable)?;
        let reader: Box<dyn BufRead + Send> = Box::new(BufReader::new(stream.try_clone().map_err(unavailable)?));
        let writer: Box<dyn Write + Send> = Box::new(stream);
        Self::handshake(ProtocolClient::new(reader, writer), None, batch_size)
    }

    /// Starts `program` and talks to it over stdin/stdout.
    pub fn spawn(program: &str, args: &[String], batch_size: usize) -> Result<Self, TopicsError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(unavailable)?;
        let stdin: ChildStdin = child.stdin.take().expect("piped stdin");
        let stdout: ChildStdout = child.stdout.take().expect("piped stdout");
        let reader: Box<dyn BufRead + Send> = Box::new(BufReader::new(stdout));
        let writer: Box<dyn Write + Send> = Box::new(stdin);
        Self::handshake(ProtocolClient::new(reader, writer), Some(child), batch_size)
    }
}

impl EmbeddingProvider for SidecarProvider {
    fn model(&self) -> &str {
        &self.model
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, TopicsError> {
        let mut client = self.client.lock();
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            out.extend(client.embed(chunk, self.dim)?);
        }
        Ok(out)
    }
}

impl Drop for SidecarProvider {
    fn drop(&mut self) {
        if let Some(child) = &self._child {
            let _ = child.lock().kill();
        }
    }
}
