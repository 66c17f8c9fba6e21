//! Dispatch of prompts and embedding requests, with an on-disk response
//! cache, bounded retries and per-model rate limiting.
//!
//! Cache layout under a cache directory:
//!
//! ```text
//! <cache>/completions/<model-slug>.jsonl   one CompletionRecord per line
//! <cache>/embeddings/<provider-slug>.jsonl one vector per (provider tag, text)
//! ```
//!
//! Completions are keyed by (model name, prompt content hash).

mod http;
mod mock;
mod parse;

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::{estimate_tokens, PromptSpec};
use crate::store::JsonlStore;
use crate::vectorspace::{EmbeddingCache, EmbeddingProvider};

pub use http::{OpenAiChat, OpenAiEmbeddings};
pub use mock::{GoldBook, MockChat, MockKind, SchedulePoint};
pub use parse::{parse_label, MatchSpan, ParseOutcome, ParsedLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointKind {
    Chat,
    Embedding,
}

/// Where requests for a profile go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum BackendSpec {
    /// OpenAI-compatible HTTP API. The key, if any, is read from the named
    /// environment variable at request time.
    Openai {
        base_url: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
    Mock(MockKind),
    /// Deterministic token-hash pseudo-encoder.
    HashEmbedding {
        dim: usize,
    },
}

fn default_timeout_secs() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelProfile {
    pub name: String,
    pub kind: EndpointKind,
    pub backend: BackendSpec,
    #[serde(default = "default_context_window")]
    pub context_window: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    /// Defaults to the profile name.
    #[serde(default)]
    pub provider_tag: Option<String>,
}

fn default_context_window() -> usize {
    128_000
}

fn default_max_output_tokens() -> u32 {
    16
}

impl ModelProfile {
    pub fn mock(name: &str, kind: MockKind) -> Self {
        ModelProfile {
            name: name.to_string(),
            kind: EndpointKind::Chat,
            backend: BackendSpec::Mock(kind),
            context_window: default_context_window(),
            temperature: 0.0,
            max_output_tokens: default_max_output_tokens(),
            requests_per_minute: None,
            provider_tag: None,
        }
    }

    pub fn tag(&self) -> &str {
        self.provider_tag.as_deref().unwrap_or(&self.name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Config("model profile with empty name".into()));
        }
        if self.context_window == 0 {
            return Err(Error::Config(format!("{}: context_window must be positive", self.name)));
        }
        if self.temperature != 0.0 {
            return Err(Error::Config(format!(
                "{}: evaluation runs use temperature 0, got {}",
                self.name, self.temperature
            )));
        }
        match (&self.kind, &self.backend) {
            (EndpointKind::Chat, BackendSpec::HashEmbedding { .. }) => Err(Error::Config(format!(
                "{}: hash_embedding backend cannot serve chat",
                self.name
            ))),
            (EndpointKind::Embedding, BackendSpec::Mock(_)) => Err(Error::Config(format!(
                "{}: mock chat backends cannot serve embeddings",
                self.name
            ))),
            (_, BackendSpec::HashEmbedding { dim: 0 }) => {
                Err(Error::Config(format!("{}: embedding dim must be positive", self.name)))
            }
            (_, BackendSpec::Openai { base_url, .. }) if !base_url.starts_with("http") => Err(Error::Config(format!(
                "{}: base_url {base_url:?} is not an http(s) URL",
                self.name
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub content_hash: String,
    pub completion: String,
    pub latency_ms: u64,
    pub attempts: u32,
    pub model: String,
    pub timestamp: String,
}

/// Outcome of one upstream attempt.
#[derive(Debug)]
pub enum AttemptError {
    /// Worth retrying: rate limiting, server errors, connection trouble.
    Retryable(String),
    Fatal(Error),
}

pub trait ChatBackend: Send + Sync {
    fn send(&self, profile: &ModelProfile, prompt: &PromptSpec) -> std::result::Result<String, AttemptError>;
}

pub trait EmbeddingBackend: Send + Sync {
    fn send(&self, profile: &ModelProfile, texts: &[String]) -> std::result::Result<Vec<Vec<f64>>, AttemptError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
            jitter: true,
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_attempts: u32) -> Self {
        RetryPolicy {
            max_attempts,
            base_delay_ms: 0,
            max_delay_ms: 0,
            jitter: false,
        }
    }

    /// Delay after failed attempt number `attempt` (1-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let exp = self
            .base_delay_ms
            .saturating_mul(1u64 << (attempt.saturating_sub(1)).min(20))
            .min(self.max_delay_ms);
        let ms = if self.jitter && exp > 0 {
            rand::thread_rng().gen_range(exp / 2..=exp)
        } else {
            exp
        };
        Duration::from_millis(ms)
    }
}

/// Spaces requests to one model at least `interval` apart.
struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    fn new(rpm: u32) -> Self {
        RateLimiter {
            interval: Duration::from_secs_f64(60.0 / rpm.max(1) as f64),
            next: Mutex::new(Instant::now()),
        }
    }

    fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().expect("limiter lock");
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

/// A chat profile bound to the backend that serves it.
#[derive(Clone)]
pub struct ChatModel {
    pub profile: ModelProfile,
    pub backend: Arc<dyn ChatBackend>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    /// Attempts actually sent upstream (chat and embedding).
    pub upstream_calls: u64,
    pub completion_cache_hits: u64,
    pub completion_cache_misses: u64,
}

pub struct Gateway {
    completions: JsonlStore<CompletionRecord>,
    embeddings: EmbeddingCache,
    retry: RetryPolicy,
    limiters: Mutex<HashMap<String, Arc<RateLimiter>>>,
    upstream_calls: AtomicU64,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl Gateway {
    pub fn in_memory(retry: RetryPolicy) -> Self {
        Gateway {
            completions: JsonlStore::in_memory(),
            embeddings: EmbeddingCache::in_memory(),
            retry,
            limiters: Mutex::new(HashMap::new()),
            upstream_calls: AtomicU64::new(0),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn open(cache_dir: &Path, retry: RetryPolicy) -> Result<Self> {
        Ok(Gateway {
            completions: JsonlStore::open(&cache_dir.join("completions"))?,
            embeddings: EmbeddingCache::open(&cache_dir.join("embeddings"))?,
            ..Self::in_memory(retry)
        })
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            upstream_calls: self.upstream_calls.load(Ordering::SeqCst),
            completion_cache_hits: self.hits.load(Ordering::SeqCst),
            completion_cache_misses: self.misses.load(Ordering::SeqCst),
        }
    }

    pub fn embedding_cache(&self) -> &EmbeddingCache {
        &self.embeddings
    }

    fn limiter(&self, profile: &ModelProfile) -> Option<Arc<RateLimiter>> {
        let rpm = profile.requests_per_minute?;
        let mut map = self.limiters.lock().expect("limiters lock");
        Some(
            map.entry(profile.name.clone())
                .or_insert_with(|| Arc::new(RateLimiter::new(rpm)))
                .clone(),
        )
    }

    fn with_retries<T>(
        &self,
        profile: &ModelProfile,
        mut attempt_fn: impl FnMut() -> std::result::Result<T, AttemptError>,
    ) -> Result<(T, u32)> {
        let limiter = self.limiter(profile);
        let max = self.retry.max_attempts.max(1);
        let mut trace = Vec::new();
        for attempt in 1..=max {
            if let Some(l) = &limiter {
                l.acquire();
            }
            self.upstream_calls.fetch_add(1, Ordering::SeqCst);
            match attempt_fn() {
                Ok(v) => return Ok((v, attempt)),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Retryable(msg)) => {
                    log::debug!("{}: attempt {attempt} failed: {msg}", profile.name);
                    trace.push(format!("attempt {attempt}: {msg}"));
                    if attempt < max {
                        std::thread::sleep(self.retry.delay(attempt));
                    }
                }
            }
        }
        Err(Error::Transport {
            model: profile.name.clone(),
            attempts: max,
            trace,
        })
    }

    /// Returns the cached completion for (model, prompt) or fetches it.
    pub fn complete(&self, model: &ChatModel, prompt: &PromptSpec) -> Result<CompletionRecord> {
        let profile = &model.profile;
        if let Some(hit) = self.completions.get(&profile.name, &prompt.content_hash) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(hit);
        }
        let estimate = estimate_tokens(prompt);
        if estimate >= profile.context_window {
            return Err(Error::ContextOverflow {
                model: profile.name.clone(),
                estimate,
                window: profile.context_window,
            });
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let started = Instant::now();
        let (completion, attempts) = self.with_retries(profile, || model.backend.send(profile, prompt))?;
        let record = CompletionRecord {
            content_hash: prompt.content_hash.clone(),
            completion,
            latency_ms: started.elapsed().as_millis() as u64,
            attempts,
            model: profile.name.clone(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        };
        self.completions.insert(&profile.name, &prompt.content_hash, record)
    }

    /// One vector per text, in order. Duplicates and cached texts are not
    /// resent.
    pub fn embed_batch(
        &self,
        profile: &ModelProfile,
        backend: &dyn EmbeddingBackend,
        texts: &[String],
    ) -> Result<Vec<Vec<f64>>> {
        if profile.kind != EndpointKind::Embedding {
            return Err(Error::Config(format!("{} is not an embedding profile", profile.name)));
        }
        let tag = profile.tag();
        let mut missing: Vec<String> = Vec::new();
        for t in texts {
            if self.embeddings.get(tag, t).is_none() && !missing.contains(t) {
                missing.push(t.clone());
            }
        }
        if !missing.is_empty() {
            let (vecs, _) = self.with_retries(profile, || backend.send(profile, &missing))?;
            if vecs.len() != missing.len() {
                return Err(Error::Protocol {
                    model: profile.name.clone(),
                    message: format!("{} vectors returned for {} inputs", vecs.len(), missing.len()),
                });
            }
            let dim = vecs.first().map(Vec::len).unwrap_or(0);
            if let Some((i, v)) = vecs.iter().enumerate().find(|(_, v)| v.len() != dim) {
                return Err(Error::Embedding(format!(
                    "{}: dimension mismatch in batch: input {i} ({:?}) has {} dims, expected {dim}",
                    profile.name,
                    missing[i],
                    v.len()
                )));
            }
            for (t, v) in missing.iter().zip(vecs) {
                self.embeddings.insert(tag, t, v)?;
            }
        }
        texts
            .iter()
            .map(|t| {
                self.embeddings
                    .get(tag, t)
                    .ok_or_else(|| Error::Embedding(format!("vector for {t:?} missing after fetch")))
            })
            .collect()
    }
}

/// Exposes a gateway-served embedding profile as an [`EmbeddingProvider`].
pub struct GatewayEmbedder {
    pub gateway: Arc<Gateway>,
    pub profile: ModelProfile,
    pub backend: Arc<dyn EmbeddingBackend>,
}

impl EmbeddingProvider for GatewayEmbedder {
    fn tag(&self) -> &str {
        self.profile.tag()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        self.gateway.embed_batch(&self.profile, self.backend.as_ref(), texts)
    }
}

/// Builds the backend for a chat profile. Mock backends answer from `gold`.
pub fn chat_backend(profile: &ModelProfile, gold: &GoldBook) -> Result<Arc<dyn ChatBackend>> {
    profile.validate()?;
    match &profile.backend {
        BackendSpec::Openai {
            base_url,
            model,
            api_key_env,
            timeout_secs,
        } => Ok(Arc::new(OpenAiChat::new(
            base_url,
            model,
            api_key_env.clone(),
            Duration::from_secs(*timeout_secs),
        ))),
        BackendSpec::Mock(kind) => Ok(Arc::new(MockChat::new(kind.clone(), gold.clone())?)),
        BackendSpec::HashEmbedding { .. } => Err(Error::Config(format!("{} is an embedding profile", profile.name))),
    }
}

/// Builds an embedding provider for an embedding profile.
pub fn embedding_provider(profile: &ModelProfile, gateway: &Arc<Gateway>) -> Result<Arc<dyn EmbeddingProvider>> {
    profile.validate()?;
    if profile.kind != EndpointKind::Embedding {
        return Err(Error::Config(format!("{} is not an embedding profile", profile.name)));
    }
    match &profile.backend {
        BackendSpec::HashEmbedding { dim } => Ok(Arc::new(crate::vectorspace::HashEmbedder::new(*dim))),
        BackendSpec::Openai {
            base_url,
            model,
            api_key_env,
            timeout_secs,
        } => Ok(Arc::new(GatewayEmbedder {
            gateway: gateway.clone(),
            profile: profile.clone(),
            backend: Arc::new(OpenAiEmbeddings::new(
                base_url,
                model,
                api_key_env.clone(),
                Duration::from_secs(*timeout_secs),
            )),
        })),
        BackendSpec::Mock(_) => Err(Error::Config(format!(
            "{}: mock backends serve chat only",
            profile.name
        ))),
    }
}
