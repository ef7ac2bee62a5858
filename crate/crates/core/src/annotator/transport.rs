//! Chat-completion transports: live HTTP, cassette replay and recording.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::io::{ensure_parent, read_jsonl_allow_empty, IoError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub system: Option<String>,
    pub user: String,
    pub temperature: f64,
    /// 1-based self-consistency trial.
    pub trial: u32,
    /// 1-based attempt within the trial; re-asks after a bad reply bump it.
    pub attempt: u32,
}

impl CompletionRequest {
    /// Key for cassette lookup.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("request serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn text(&self) -> String {
        match &self.system {
            Some(s) => format!("{s}\n\n{}", self.user),
            None => self.user.clone(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("no cassette entry for request {hash}")]
    CassetteMiss { hash: String },
    #[error("cassette `{0}` does not exist")]
    MissingCassette(PathBuf),
    #[error("environment variable `{0}` with API credentials is not set")]
    MissingCredentials(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("network error: {0}")]
    Network(String),
    #[error("unexpected completion payload: {0}")]
    Payload(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

pub trait Transport: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<String, TransportError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub request_hash: String,
    pub request_text: String,
    pub response_text: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

pub struct ReplayTransport {
    entries: HashMap<String, String>,
}

impl ReplayTransport {
    pub fn open(path: &Path) -> Result<Self, TransportError> {
        if !path.exists() {
            return Err(TransportError::MissingCassette(path.to_path_buf()));
        }
        let rows: Vec<CassetteEntry> = read_jsonl_allow_empty(path)?;
        Ok(Self::from_entries(rows))
    }

    pub fn from_entries(rows: impl IntoIterator<Item = CassetteEntry>) -> Self {
        ReplayTransport {
            entries: rows
                .into_iter()
                .map(|e| (e.request_hash, e.response_text))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Transport for ReplayTransport {
    fn complete(&self, req: &CompletionRequest) -> Result<String, TransportError> {
        let hash = req.hash();
        self.entries
            .get(&hash)
            .cloned()
            .ok_or(TransportError::CassetteMiss { hash })
    }
}

/// Seconds since the epoch, pinned by `SOURCE_DATE_EPOCH` when set.
pub fn now_epoch() -> u64 {
    if let Some(v) = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse().ok())
    {
        return v;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Forwards to `inner` and appends every exchange to a cassette file.
/// Requests already on the cassette are answered from it.
pub struct RecordingTransport<T> {
    inner: T,
    path: PathBuf,
    known: Mutex<HashMap<String, String>>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T, path: &Path) -> Result<Self, TransportError> {
        ensure_parent(path)?;
        let known = if path.exists() {
            read_jsonl_allow_empty::<CassetteEntry>(path)?
                .into_iter()
                .map(|e| (e.request_hash, e.response_text))
                .collect()
        } else {
            HashMap::new()
        };
        Ok(RecordingTransport {
            inner,
            path: path.to_path_buf(),
            known: Mutex::new(known),
        })
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn complete(&self, req: &CompletionRequest) -> Result<String, TransportError> {
        let hash = req.hash();
        if let Some(hit) = self.known.lock().expect("cassette lock").get(&hash) {
            return Ok(hit.clone());
        }
        let reply = self.inner.complete(req)?;
        let mut known = self.known.lock().expect("cassette lock");
        if known.contains_key(&hash) {
            return Ok(reply);
        }
        let entry = CassetteEntry {
            request_hash: hash.clone(),
            request_text: req.text(),
            response_text: reply.clone(),
            timestamp: now_epoch(),
        };
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| IoError::io(&self.path, e))?;
        let line = serde_json::to_string(&entry).expect("entry serializes");
        writeln!(file, "{line}").map_err(|e| IoError::io(&self.path, e))?;
        known.insert(hash, reply.clone());
        Ok(reply)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before attempt n+1 is `backoff_ms[min(n-1, len-1)]`.
    pub backoff_ms: Vec<u64>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_ms: vec![1000, 4000, 16000],
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let idx = (attempt.saturating_sub(1) as usize).min(self.backoff_ms.len().saturating_sub(1));
        Duration::from_millis(self.backoff_ms.get(idx).copied().unwrap_or(0))
    }
}

/// OpenAI-compatible `chat/completions` client.
pub struct LiveTransport {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
    retry: RetryPolicy,
}

impl LiveTransport {
    pub fn new(endpoint: &str, credentials_env: &str, retry: RetryPolicy) -> Result<Self, TransportError> {
        let api_key = std::env::var(credentials_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| TransportError::MissingCredentials(credentials_env.to_string()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        Ok(LiveTransport {
            client,
            endpoint: endpoint.to_string(),
            api_key,
            retry,
        })
    }

    fn once(&self, req: &CompletionRequest) -> Result<String, TransportError> {
        let mut messages = Vec::new();
        if let Some(s) = &req.system {
            messages.push(serde_json::json!({"role": "system", "content": s}));
        }
        messages.push(serde_json::json!({"role": "user", "content": req.user}));
        let body = serde_json::json!({
            "model": req.model,
            "temperature": req.temperature,
            "messages": messages,
        });
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        if !status.is_success() {
            return Err(TransportError::Http {
                status: status.as_u16(),
                body: text,
            });
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| TransportError::Payload(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| TransportError::Payload("missing choices[0].message.content".into()))
    }
}

fn retryable(e: &TransportError) -> bool {
    match e {
        TransportError::Network(_) => true,
        TransportError::Http { status, .. } => *status == 429 || *status >= 500,
        _ => false,
    }
}

impl Transport for LiveTransport {
    fn complete(&self, req: &CompletionRequest) -> Result<String, TransportError> {
        let mut attempt = 1;
        loop {
            match self.once(req) {
                Err(e) if retryable(&e) && attempt < self.retry.max_attempts => {
                    let wait = self.retry.delay(attempt);
                    warn!("request failed ({e}); retrying in {wait:?}");
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Adapts a closure into a transport.
pub struct FnTransport<F>(pub F);

impl<F> Transport for FnTransport<F>
where
    F: Fn(&CompletionRequest) -> Result<String, TransportError> + Send + Sync,
{
    fn complete(&self, req: &CompletionRequest) -> Result<String, TransportError> {
        (self.0)(req)
    }
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn complete(&self, req: &CompletionRequest) -> Result<String, TransportError> {
        (**self).complete(req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo;
    impl Transport for Echo {
        fn complete(&self, req: &CompletionRequest) -> Result<String, TransportError> {
            Ok(format!("echo:{}", req.user))
        }
    }

    fn req(user: &str, trial: u32) -> CompletionRequest {
        CompletionRequest {
            model: "m".into(),
            system: None,
            user: user.into(),
            temperature: 1.0,
            trial,
            attempt: 1,
        }
    }

    #[test]
    fn hash_covers_trial_and_text() {
        assert_eq!(req("a", 1).hash(), req("a", 1).hash());
        assert_ne!(req("a", 1).hash(), req("a", 2).hash());
        assert_ne!(req("a", 1).hash(), req("b", 1).hash());
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let rec = RecordingTransport::new(Echo, &path).unwrap();
        assert_eq!(rec.complete(&req("x", 1)).unwrap(), "echo:x");
        rec.complete(&req("x", 1)).unwrap();
        rec.complete(&req("y", 1)).unwrap();
        let replay = ReplayTransport::open(&path).unwrap();
        assert_eq!(replay.len(), 2);
        assert_eq!(replay.complete(&req("y", 1)).unwrap(), "echo:y");
        assert!(matches!(
            replay.complete(&req("z", 1)),
            Err(TransportError::CassetteMiss { .. })
        ));
        assert!(matches!(
            ReplayTransport::open(&dir.path().join("none.jsonl")),
            Err(TransportError::MissingCassette(_))
        ));
    }

    #[test]
    fn live_needs_credentials() {
        let r = LiveTransport::new(
            "http://127.0.0.1:9/v1/chat/completions",
            "FACTORPREF_TEST_UNSET_KEY",
            RetryPolicy::default(),
        );
        assert!(matches!(r, Err(TransportError::MissingCredentials(_))));
    }

    #[test]
    fn backoff_schedule_saturates() {
        let p = RetryPolicy {
            max_attempts: 5,
            backoff_ms: vec![10, 20],
        };
        assert_eq!(p.delay(1), Duration::from_millis(10));
        assert_eq!(p.delay(4), Duration::from_millis(20));
    }
}
