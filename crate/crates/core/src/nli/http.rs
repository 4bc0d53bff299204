use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{BackendError, BackendStats, NliBackend, NliPair};
use crate::types::{NliDistribution, RawDistribution};

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    /// Base URL; `/nli` and `/health` are appended.
    pub endpoint_url: String,
    pub batch_size: usize,
    pub timeout: Duration,
    pub retries: u32,
    pub cache_enabled: bool,
    /// First retry delay, doubled on every further attempt.
    pub retry_base: Duration,
    pub max_in_flight: usize,
}

impl BackendConfig {
    pub fn new(endpoint_url: impl Into<String>) -> Self {
        BackendConfig {
            endpoint_url: endpoint_url.into(),
            batch_size: 16,
            timeout: Duration::from_secs(30),
            retries: 2,
            cache_enabled: true,
            retry_base: Duration::from_millis(500),
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthInfo {
    pub status: String,
    pub model: String,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    pairs: &'a [NliPair],
}

#[derive(Deserialize)]
struct WireResult {
    #[serde(flatten)]
    distribution: RawDistribution,
    #[serde(default)]
    truncated: bool,
}

#[derive(Deserialize)]
struct WireResponse {
    results: Vec<WireResult>,
}

#[derive(Deserialize)]
struct WireError {
    error: String,
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cond: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Gate {
            free: Mutex::new(n.max(1)),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> GatePermit<'_> {
        let mut free = self.free.lock().expect("gate lock poisoned");
        while *free == 0 {
            free = self.cond.wait(free).expect("gate lock poisoned");
        }
        *free -= 1;
        GatePermit(self)
    }
}

struct GatePermit<'a>(&'a Gate);

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate lock poisoned") += 1;
        self.0.cond.notify_one();
    }
}

enum Attempt {
    Retry(String),
    Fatal(BackendError),
}

/// Blocking client for the inference sidecar. Batches are split into
/// `batch_size` chunks and sent in order; transient failures (transport
/// errors, 5xx) are retried with exponential backoff.
#[derive(Debug)]
pub struct HttpBackend {
    config: BackendConfig,
    client: Client,
    gate: Gate,
    requests: AtomicU64,
    pairs: AtomicU64,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        if config.batch_size == 0 {
            return Err(BackendError::InvalidRequest(
                "batch_size must be at least 1".to_string(),
            ));
        }
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::InvalidRequest(format!("cannot build HTTP client: {e}")))?;
        Ok(HttpBackend {
            gate: Gate::new(config.max_in_flight),
            config,
            client,
            requests: AtomicU64::new(0),
            pairs: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!(
            "{}/{}",
            self.config.endpoint_url.trim_end_matches('/'),
            path
        )
    }

    pub fn health(&self) -> Result<HealthInfo, BackendError> {
        let unavailable = |message: String| BackendError::Unavailable {
            pair_index: 0,
            attempts: 1,
            message,
        };
        let resp = self
            .client
            .get(self.url("health"))
            .send()
            .map_err(|e| unavailable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(unavailable(format!("health check returned {status}")));
        }
        resp.json()
            .map_err(|e| BackendError::Protocol(format!("bad health response: {e}")))
    }

    fn post_chunk(&self, chunk: &[NliPair]) -> Result<Vec<NliDistribution>, Attempt> {
        let _permit = self.gate.acquire();
        self.requests.fetch_add(1, Ordering::Relaxed);
        let resp = self
            .client
            .post(self.url("nli"))
            .json(&WireRequest { pairs: chunk })
            .send()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() {
            let body = resp.text().unwrap_or_default();
            return Err(Attempt::Retry(format!(
                "{status}: {}",
                error_message(&body)
            )));
        }
        if status != StatusCode::OK {
            let body = resp.text().unwrap_or_default();
            return Err(Attempt::Fatal(BackendError::Protocol(format!(
                "{status}: {}",
                error_message(&body)
            ))));
        }
        let body: WireResponse = resp.json().map_err(|e| {
            Attempt::Fatal(BackendError::Protocol(format!("bad response body: {e}")))
        })?;
        if body.results.len() != chunk.len() {
            return Err(Attempt::Fatal(BackendError::Protocol(format!(
                "expected {} results, got {}",
                chunk.len(),
                body.results.len()
            ))));
        }
        body.results
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                if r.truncated {
                    warn!("service truncated input for pair {:?}", chunk[i].hypothesis);
                }
                NliDistribution::try_from(r.distribution)
                    .map_err(|e| Attempt::Fatal(BackendError::Protocol(format!("result {i}: {e}"))))
            })
            .collect()
    }

    fn classify_chunk(
        &self,
        chunk: &[NliPair],
        offset: usize,
    ) -> Result<Vec<NliDistribution>, BackendError> {
        let attempts = self.config.retries + 1;
        let mut delay = self.config.retry_base;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.post_chunk(chunk) {
                Ok(out) => {
                    self.pairs.fetch_add(chunk.len() as u64, Ordering::Relaxed);
                    return Ok(out);
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(message)) => {
                    debug!("attempt {attempt}/{attempts} failed: {message}");
                    last = message;
                    if attempt < attempts {
                        thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(BackendError::Unavailable {
            pair_index: offset,
            attempts,
            message: last,
        })
    }
}

fn error_message(body: &str) -> String {
    serde_json::from_str::<WireError>(body)
        .map(|e| e.error)
        .unwrap_or_else(|_| body.chars().take(200).collect())
}

impl NliBackend for HttpBackend {
    fn classify_pairs(&self, pairs: &[NliPair]) -> Result<Vec<NliDistribution>, BackendError> {
        let mut out = Vec::with_capacity(pairs.len());
        for (n, chunk) in pairs.chunks(self.config.batch_size).enumerate() {
            out.extend(self.classify_chunk(chunk, n * self.config.batch_size)?);
        }
        Ok(out)
    }

    fn stats(&self) -> BackendStats {
        BackendStats {
            requests: self.requests.load(Ordering::Relaxed),
            pairs_classified: self.pairs.load(Ordering::Relaxed),
            cache_hits: 0,
        }
    }
}
