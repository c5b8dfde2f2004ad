//! Single entry point for all model calls, with three interchangeable
//! providers (live HTTP, replay, synthetic), a content-addressed response
//! cache, retry with exponential backoff, and rate limiting.

mod cache;
mod http;
mod limiter;
mod synthetic;

pub use cache::{CacheEntry, ReplayProvider, ResponseCache};
pub use http::{HttpProvider, API_KEY_ENV};
pub use limiter::TokenBucket;
pub use synthetic::{ConfuserMode, SyntheticProvider, SyntheticVoterModel};

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::ItemKey;

/// One completion call as sent on the wire and as canonicalized for caching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_name: String,
    pub prompt: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: u32,
}

impl CompletionRequest {
    /// Canonical JSON: keys sorted, floats in shortest round-trip form, so
    /// requests differing only in key order or float spelling (0.5 vs 0.50)
    /// canonicalize identically.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("request serializes");
        value.to_string()
    }

    pub fn cache_key(&self) -> CacheKey {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_json().as_bytes());
        CacheKey(hex::encode(hasher.finalize()))
    }
}

/// Content hash of a canonicalized request; addresses one cache file.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn digest(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Http,
    Replay,
    Synthetic,
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProviderKind::Http => write!(f, "http"),
            ProviderKind::Replay => write!(f, "replay"),
            ProviderKind::Synthetic => write!(f, "synthetic"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResponse {
    pub text: String,
    pub provider: ProviderKind,
    pub cached: bool,
    pub latency: Duration,
}

/// What a call is for. Live and replay providers ignore this; the synthetic
/// provider needs it to act as a deterministic voter.
#[derive(Debug, Clone)]
pub enum CallContext {
    Plain,
    Summarize,
    Predict {
        turn_id: u8,
        item: ItemKey,
        truth: String,
    },
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("no API key: set the {0} environment variable")]
    MissingApiKey(&'static str),
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("upstream HTTP {status}: {message}")]
    Http { status: u16, message: String },
    #[error("network error: {0}")]
    Network(String),
    #[error("malformed provider response: {0}")]
    Protocol(String),
    #[error("replay store has no entry for digest {digest}")]
    ReplayMiss { digest: String },
    #[error("cache I/O at {path}: {source}")]
    CacheIo {
        path: String,
        source: std::io::Error,
    },
    #[error("cache entry {path} is corrupt: {source}")]
    CacheCorrupt {
        path: String,
        source: serde_json::Error,
    },
    #[error("synthetic model has no accuracy for turn {0}")]
    UnknownTurn(u8),
    #[error("invalid synthetic model: {0}")]
    InvalidModel(String),
    #[error("giving up after {attempts} attempts: {last}")]
    Exhausted {
        attempts: u32,
        last: Box<GatewayError>,
    },
}

impl GatewayError {
    /// Whether retrying could plausibly succeed: rate limiting, server-side
    /// failures, and network errors are transient; everything else is not.
    pub fn is_transient(&self) -> bool {
        match self {
            GatewayError::Http { status, .. } => *status == 429 || *status >= 500,
            GatewayError::Network(_) => true,
            _ => false,
        }
    }
}

/// Exponential backoff for transient upstream failures.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based): base × 2^(attempt−1),
    /// scaled by a random factor in [0.5, 1.0) when jitter is on.
    fn delay_before_retry(&self, attempt: u32) -> Duration {
        let exp = self.base_delay.as_secs_f64() * f64::from(1u32 << (attempt - 1).min(16));
        let factor = if self.jitter {
            0.5 + 0.5 * rand::random::<f64>()
        } else {
            1.0
        };
        Duration::from_secs_f64(exp * factor)
    }
}

/// A completion backend. Implementations must be shareable across the
/// bounded worker pools that fan prediction/summarization calls out.
pub trait Provider: Send + Sync {
    fn kind(&self) -> ProviderKind;

    fn complete(
        &self,
        request: &CompletionRequest,
        context: &CallContext,
    ) -> Result<String, GatewayError>;

    /// Whether gateway-level caching applies. The synthetic provider is a
    /// pure function and the replay provider already reads a store, so both
    /// opt out.
    fn wants_cache(&self) -> bool {
        true
    }
}

/// Provider plus cache, retry, and rate-limiting policy. Safe for concurrent
/// callers.
pub struct Gateway {
    provider: Box<dyn Provider>,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    limiter: Option<TokenBucket>,
    upstream_calls: AtomicU64,
}

impl Gateway {
    pub fn new(
        provider: Box<dyn Provider>,
        cache: Option<ResponseCache>,
        retry: RetryPolicy,
        limiter: Option<TokenBucket>,
    ) -> Gateway {
        Gateway {
            provider,
            cache,
            retry,
            limiter,
            upstream_calls: AtomicU64::new(0),
        }
    }

    pub fn provider_kind(&self) -> ProviderKind {
        self.provider.kind()
    }

    /// Number of provider invocations made (cache hits excluded, each retry
    /// attempt counted).
    pub fn upstream_calls(&self) -> u64 {
        self.upstream_calls.load(Ordering::Relaxed)
    }

    /// Serve a completion: cache lookup first, then the provider with
    /// rate-limited admission and exponential backoff on transient failures;
    /// successful upstream responses are persisted to the cache.
    pub fn complete(
        &self,
        request: &CompletionRequest,
        context: &CallContext,
    ) -> Result<CompletionResponse, GatewayError> {
        let start = Instant::now();
        let cache = self.cache.as_ref().filter(|_| self.provider.wants_cache());
        let key = request.cache_key();
        if let Some(cache) = cache {
            if let Some(entry) = cache.get(&key)? {
                return Ok(CompletionResponse {
                    text: entry.response_text,
                    provider: self.provider.kind(),
                    cached: true,
                    latency: start.elapsed(),
                });
            }
        }

        let mut attempt = 1;
        loop {
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            self.upstream_calls.fetch_add(1, Ordering::Relaxed);
            match self.provider.complete(request, context) {
                Ok(text) => {
                    if let Some(cache) = cache {
                        cache.put(&key, request, &text)?;
                    }
                    return Ok(CompletionResponse {
                        text,
                        provider: self.provider.kind(),
                        cached: false,
                        latency: start.elapsed(),
                    });
                }
                Err(err) if err.is_transient() && attempt < self.retry.max_attempts => {
                    let delay = self.retry.delay_before_retry(attempt);
                    log::warn!(
                        "transient upstream failure (attempt {attempt}/{max}): {err}; retrying in {delay:?}",
                        max = self.retry.max_attempts,
                    );
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(err) if err.is_transient() => {
                    return Err(GatewayError::Exhausted {
                        attempts: attempt,
                        last: Box::new(err),
                    });
                }
                Err(err) => return Err(err),
            }
        }
    }
}
