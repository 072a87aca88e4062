//! Chat-completion backends shared by every prompt-driven stage.
//!
//! [`RemoteBackend`] speaks the common `/chat/completions` JSON shape with
//! retries and a per-instance concurrency bound. [`MockBackend`] answers
//! offline with format-valid output for each prompt family.

mod mock;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Attempt, Error, Result};
use crate::http::{JsonClient, RetryPolicy};

pub use mock::MockBackend;

pub const QUESTION_TEMPERATURE: f64 = 0.75;
pub const ANSWER_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_TOKENS: u32 = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model: String,
}

impl ChatRequest {
    pub fn new(user: impl Into<String>, temperature: f64, model: impl Into<String>) -> Self {
        ChatRequest {
            system: None,
            user: user.into(),
            temperature,
            max_tokens: DEFAULT_MAX_TOKENS,
            model: model.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.user.is_empty() {
            return Err(Error::Argument("chat request has an empty user message".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::Argument(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(Error::Argument("max_tokens must be positive".into()));
        }
        Ok(())
    }

    fn to_wire(&self) -> Value {
        let mut messages = Vec::new();
        if let Some(s) = &self.system {
            messages.push(json!({"role": "system", "content": s}));
        }
        messages.push(json!({"role": "user", "content": self.user}));
        json!({
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub base_backoff_ms: u64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_model() -> String {
    "mock".into()
}
fn default_concurrency() -> usize {
    8
}
fn default_retries() -> u32 {
    4
}
fn default_backoff() -> u64 {
    500
}
fn default_timeout() -> u64 {
    300
}

impl BackendConfig {
    pub fn mock(seed: u64) -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint: None,
            model: default_model(),
            api_key_env: None,
            max_concurrency: default_concurrency(),
            max_retries: default_retries(),
            base_backoff_ms: default_backoff(),
            timeout_secs: default_timeout(),
            seed: Some(seed),
        }
    }

    pub fn remote(endpoint: &str, model: &str, api_key_env: &str) -> Self {
        BackendConfig {
            kind: BackendKind::Remote,
            endpoint: Some(endpoint.to_string()),
            model: model.to_string(),
            api_key_env: Some(api_key_env.to_string()),
            seed: None,
            ..BackendConfig::mock(0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_concurrency == 0 {
            return Err(Error::Argument("max_concurrency must be positive".into()));
        }
        match self.kind {
            BackendKind::Remote if self.endpoint.is_none() || self.api_key_env.is_none() => Err(
                Error::Argument("remote backend requires endpoint and api_key_env".into()),
            ),
            BackendKind::Mock if self.seed.is_none() => {
                Err(Error::Argument("mock backend requires a seed".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            base_backoff_ms: self.base_backoff_ms,
            timeout_secs: self.timeout_secs,
        }
    }

    pub fn build(&self) -> Result<Box<dyn ChatBackend>> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::Mock => Box::new(MockBackend::new(self.seed.unwrap_or_default())),
            BackendKind::Remote => Box::new(RemoteBackend::from_config(self)?),
        })
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<String>;

    /// How many requests a batch may keep in flight against this backend.
    fn max_concurrency(&self) -> usize {
        1
    }
}

/// Single request through a backend built from `cfg`.
pub fn complete(req: &ChatRequest, cfg: &BackendConfig) -> Result<String> {
    cfg.build()?.complete(req)
}

/// Runs every request with at most `backend.max_concurrency()` in flight.
/// Results carry their original index and are returned in index order;
/// failures are per item.
pub fn complete_batch(backend: &dyn ChatBackend, reqs: &[ChatRequest]) -> Vec<(usize, Result<String>)> {
    bounded_map(reqs, backend.max_concurrency(), |r| {
        r.validate().and_then(|_| backend.complete(r))
    })
    .into_iter()
    .enumerate()
    .collect()
}

/// Applies `f` to every item on at most `workers` threads, preserving order.
pub fn bounded_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if items.is_empty() {
        return Vec::new();
    }
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every item is processed"))
        .collect()
}

/// Backend defined by a closure; used for scripted responses and fault
/// injection.
pub struct FnBackend<F> {
    f: F,
    concurrency: usize,
}

impl<F> FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        FnBackend { f, concurrency: 4 }
    }

    pub fn with_concurrency(mut self, n: usize) -> Self {
        self.concurrency = n.max(1);
        self
    }
}

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String> + Send + Sync,
{
    fn complete(&self, req: &ChatRequest) -> Result<String> {
        (self.f)(req)
    }

    fn max_concurrency(&self) -> usize {
        self.concurrency
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            permits: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.cv.wait(p).unwrap();
        }
        *p -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// HTTP client for `{endpoint}/chat/completions`.
pub struct RemoteBackend {
    url: String,
    api_key: Option<String>,
    client: JsonClient,
    limit: Semaphore,
    concurrency: usize,
}

impl RemoteBackend {
    pub fn from_config(cfg: &BackendConfig) -> Result<Self> {
        cfg.validate()?;
        let endpoint = cfg.endpoint.as_deref().unwrap_or_default().trim_end_matches('/');
        let api_key = cfg.api_key_env.as_deref().and_then(|v| std::env::var(v).ok());
        Ok(RemoteBackend {
            url: format!("{endpoint}/chat/completions"),
            api_key,
            client: JsonClient::new(cfg.retry_policy()),
            limit: Semaphore::new(cfg.max_concurrency),
            concurrency: cfg.max_concurrency,
        })
    }

    /// Like [`ChatBackend::complete`] but also returns the attempt log.
    pub fn complete_logged(&self, req: &ChatRequest) -> (Result<String>, Vec<Attempt>) {
        if let Err(e) = req.validate() {
            return (Err(e), Vec::new());
        }
        let _permit = self.limit.acquire();
        let (resp, log) = self.client.post(&self.url, self.api_key.as_deref(), &req.to_wire());
        let text = resp.and_then(|v| {
            v.pointer("/choices/0/message/content")
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| Error::Backend {
                    message: "response has no choices[0].message.content".into(),
                    ids: Vec::new(),
                    attempts: log.clone(),
                })
        });
        (text, log)
    }
}

impl ChatBackend for RemoteBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String> {
        self.complete_logged(req).0
    }

    fn max_concurrency(&self) -> usize {
        self.concurrency
    }
}
