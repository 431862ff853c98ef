//! The frozen big model: a pluggable text-generation backend behind a
//! persistent response cache.

mod cache;
mod http;
mod mock;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::toylm::DecodeParams;

pub use cache::{cache_key, CacheEntry, ResponseCache};
pub use http::HttpBackend;
pub use mock::{mock_rationale_policy, MockBackend, MockPolicy, DISTRACTOR, NO_HINT, YES_HINT};

/// Environment variable holding the bearer token for HTTP backends.
pub const TOKEN_ENV: &str = "FIAT_ORACLE_TOKEN";

#[derive(Debug, Clone, thiserror::Error)]
pub enum OracleError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
    #[error("cache: {0}")]
    Cache(String),
}

impl OracleError {
    pub fn kind(&self) -> &'static str {
        match self {
            OracleError::BackendUnavailable(_) => "BackendUnavailable",
            OracleError::MalformedResponse(_) => "MalformedResponse",
            OracleError::Timeout { .. } => "Timeout",
            OracleError::InvalidConfig(_) => "InvalidConfig",
            OracleError::Cache(_) => "Cache",
        }
    }
}

/// Error for one element of a batch.
#[derive(Debug, Clone, thiserror::Error)]
#[error("prompt {index}: {error}")]
pub struct ItemError {
    pub index: usize,
    pub error: OracleError,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
}

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_concurrency() -> usize {
    4
}
fn default_backoff() -> u64 {
    500
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    /// Names the backend in cache keys and provenance.
    pub id: String,
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Retries after the first attempt, on timeouts and 5xx only.
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_concurrency")]
    pub max_concurrent: usize,
    /// First backoff delay; each retry doubles it.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

impl BackendConfig {
    pub fn mock(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind: BackendKind::Mock,
            endpoint: String::new(),
            model: "mock".into(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            max_concurrent: default_concurrency(),
            backoff_ms: default_backoff(),
        }
    }

    pub fn http(id: impl Into<String>, endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind: BackendKind::Http,
            endpoint: endpoint.into(),
            model: model.into(),
            ..Self::mock("")
        }
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(OracleError::InvalidConfig("timeout must be positive".into()));
        }
        if self.max_concurrent == 0 {
            return Err(OracleError::InvalidConfig("max_concurrent must be at least 1".into()));
        }
        if self.id.is_empty() {
            return Err(OracleError::InvalidConfig("empty backend id".into()));
        }
        if self.kind == BackendKind::Http && self.endpoint.is_empty() {
            return Err(OracleError::InvalidConfig("http backend needs an endpoint".into()));
        }
        Ok(())
    }
}

/// Decode settings for oracle calls: up to 256 tokens, stop at a blank line.
pub fn default_oracle_decode() -> DecodeParams {
    DecodeParams::new(256).with_stop("\n\n")
}

/// Something that turns a prompt into text. Implementations are called
/// from several threads at once.
pub trait Backend: Send + Sync {
    fn complete(&self, prompt: &str, dp: &DecodeParams) -> Result<String, OracleError>;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub text: String,
    pub cache_hit: bool,
    pub latency_ms: u64,
    pub backend: String,
}

/// Cuts `text` at the earliest stop sequence.
pub fn truncate_at_stop(text: &str, stop: &[String]) -> String {
    let cut = stop
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    text[..cut].to_string()
}

pub struct Oracle {
    config: BackendConfig,
    backend: Box<dyn Backend>,
    cache: Option<ResponseCache>,
    backend_calls: AtomicUsize,
}

impl Oracle {
    /// HTTP oracle for an `http` config.
    pub fn from_config(config: BackendConfig, cache: Option<ResponseCache>) -> Result<Self, OracleError> {
        config.validate()?;
        match config.kind {
            BackendKind::Http => {
                let backend = HttpBackend::new(&config);
                Ok(Self::with_backend(config, Box::new(backend), cache))
            }
            BackendKind::Mock => Err(OracleError::InvalidConfig(
                "mock backends need a policy; use Oracle::with_backend".into(),
            )),
        }
    }

    pub fn with_backend(config: BackendConfig, backend: Box<dyn Backend>, cache: Option<ResponseCache>) -> Self {
        Self {
            config,
            backend,
            cache,
            backend_calls: AtomicUsize::new(0),
        }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    /// Prompts that went past the cache to the backend.
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn key(&self, prompt: &str, dp: &DecodeParams) -> String {
        cache_key(&self.config.id, &self.config.model, prompt, dp)
    }

    /// Cached text if present, otherwise a backend call whose result is
    /// stored before returning.
    pub fn generate(&self, prompt: &str, dp: &DecodeParams) -> Result<OracleResponse, OracleError> {
        let key = self.key(prompt, dp);
        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.get(&key)? {
                return Ok(OracleResponse {
                    text: entry.text,
                    cache_hit: true,
                    latency_ms: 0,
                    backend: entry.backend,
                });
            }
        }
        let start = Instant::now();
        self.backend_calls.fetch_add(1, Ordering::SeqCst);
        let raw = self.backend.complete(prompt, dp)?;
        let text = truncate_at_stop(&raw, &dp.stop);
        let latency_ms = start.elapsed().as_millis() as u64;
        if let Some(cache) = &self.cache {
            cache.put(&key, prompt, &text, &self.config.id)?;
        }
        Ok(OracleResponse {
            text,
            cache_hit: false,
            latency_ms,
            backend: self.config.id.clone(),
        })
    }

    /// Runs [`Oracle::generate`] over `prompts` with at most
    /// `max_concurrent` calls in flight. Results keep input order.
    pub fn batch_generate<S: AsRef<str> + Sync>(
        &self,
        prompts: &[S],
        dp: &DecodeParams,
    ) -> Vec<Result<OracleResponse, ItemError>> {
        let n = prompts.len();
        let workers = self.config.max_concurrent.max(1).min(n);
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<OracleResponse, ItemError>>>> = Mutex::new(vec![None; n]);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= n {
                        break;
                    }
                    let r = self
                        .generate(prompts[i].as_ref(), dp)
                        .map_err(|error| ItemError { index: i, error });
                    slots.lock().expect("no panics while holding the lock")[i] = Some(r);
                });
            }
        });
        slots
            .into_inner()
            .expect("workers joined")
            .into_iter()
            .map(|r| r.expect("every index processed"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stop_truncation_uses_earliest_match() {
        let stop = vec!["\n\n".to_string(), "END".to_string()];
        assert_eq!(truncate_at_stop("a END b\n\nc", &stop), "a ");
        assert_eq!(truncate_at_stop("plain", &stop), "plain");
    }

    #[test]
    fn config_validation() {
        let mut c = BackendConfig::mock("m");
        assert!(c.validate().is_ok());
        c.max_concurrent = 0;
        assert!(c.validate().is_err());
        let mut c = BackendConfig::mock("m");
        c.timeout_secs = 0.0;
        assert!(c.validate().is_err());
        assert!(BackendConfig::http("h", "", "m").validate().is_err());
    }

    #[test]
    fn config_defaults_fill_in() {
        let c: BackendConfig = serde_json::from_str(r#"{"id":"x","kind":"http","endpoint":"http://h"}"#).unwrap();
        assert_eq!(c.max_retries, 3);
        assert_eq!(c.backoff_ms, 500);
    }
}
