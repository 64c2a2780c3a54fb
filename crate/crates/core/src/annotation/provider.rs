//! Chat-completion provider abstraction and the rate-limited dispatcher that
//! every model request goes through.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{Mutex, Semaphore};
use tokio::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub model_id: String,
    pub prompt: String,
    pub max_output_tokens: u32,
    pub temperature: f32,
}

impl ProviderRequest {
    /// Classification requests always run at temperature 0.
    pub fn new(model_id: impl Into<String>, prompt: String, max_output_tokens: u32) -> Self {
        Self {
            model_id: model_id.into(),
            prompt,
            max_output_tokens,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub text: String,
    pub usage: TokenUsage,
    pub latency: Duration,
    pub status: u16,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    /// Worth retrying: rate limited, timeouts, 5xx.
    #[error("transient provider error: {0}")]
    Transient(String),
    #[error("provider error: {0}")]
    Permanent(String),
}

#[async_trait]
pub trait ChatProvider: Send + Sync {
    fn model_id(&self) -> &str;

    async fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(with = "millis")]
    pub backoff_base: Duration,
    #[serde(with = "millis")]
    pub backoff_cap: Duration,
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based): `base * 2^(attempt-1)`, capped.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.saturating_sub(1)).unwrap_or(u32::MAX);
        self.backoff_base.saturating_mul(factor).min(self.backoff_cap)
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateLimitPolicy {
    pub max_requests_per_minute: u32,
    pub max_in_flight: u32,
    pub retry: RetryPolicy,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid rate limit policy: {0}")]
pub struct PolicyError(pub String);

impl Default for RateLimitPolicy {
    fn default() -> Self {
        Self {
            max_requests_per_minute: 500,
            max_in_flight: 32,
            retry: RetryPolicy {
                max_attempts: 4,
                backoff_base: Duration::from_millis(500),
                backoff_cap: Duration::from_secs(30),
            },
        }
    }
}

impl RateLimitPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.max_requests_per_minute == 0 || self.max_in_flight == 0 || self.retry.max_attempts == 0 {
            return Err(PolicyError("limits and attempts must be positive".into()));
        }
        if self.retry.backoff_base.is_zero() {
            return Err(PolicyError("backoff base must be positive".into()));
        }
        if self.retry.backoff_cap < self.retry.backoff_base {
            return Err(PolicyError("backoff cap must be at least the base".into()));
        }
        Ok(())
    }
}

pub const RATE_WINDOW: Duration = Duration::from_secs(60);

/// One provider call as seen by the dispatcher. Times are offsets from the
/// dispatcher's creation on the tokio clock, so they are simulated when the
/// runtime's time is paused.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DispatchRecord {
    pub id: u64,
    pub dispatched: Duration,
    pub completed: Duration,
    pub ok: bool,
}

/// Enforces the in-flight bound and the 60-second sliding-window request
/// cap, retries transient failures with capped exponential backoff, and
/// records a dispatch trace.
pub struct Dispatcher {
    provider: Arc<dyn ChatProvider>,
    policy: RateLimitPolicy,
    permits: Semaphore,
    window: Mutex<VecDeque<Instant>>,
    trace: parking_lot::Mutex<Vec<DispatchRecord>>,
    epoch: Instant,
    next_id: AtomicU64,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

impl Dispatcher {
    pub fn new(provider: Arc<dyn ChatProvider>, policy: RateLimitPolicy) -> Result<Self, PolicyError> {
        policy.validate()?;
        Ok(Self {
            provider,
            permits: Semaphore::new(policy.max_in_flight as usize),
            window: Mutex::new(VecDeque::new()),
            trace: parking_lot::Mutex::new(Vec::new()),
            epoch: Instant::now(),
            next_id: AtomicU64::new(0),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
            policy,
        })
    }

    pub fn policy(&self) -> &RateLimitPolicy {
        &self.policy
    }

    pub fn model_id(&self) -> &str {
        self.provider.model_id()
    }

    pub fn trace(&self) -> Vec<DispatchRecord> {
        self.trace.lock().clone()
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    pub fn request_count(&self) -> u64 {
        self.next_id.load(Ordering::SeqCst)
    }

    /// Waits until a dispatch is allowed by the sliding window and claims it.
    async fn claim_slot(&self) -> Instant {
        let limit = self.policy.max_requests_per_minute as usize;
        let mut window = self.window.lock().await;
        loop {
            let now = Instant::now();
            while window.front().is_some_and(|&t| now.duration_since(t) >= RATE_WINDOW) {
                window.pop_front();
            }
            if window.len() < limit {
                window.push_back(now);
                return now;
            }
            let oldest = *window.front().expect("window is full");
            tokio::time::sleep_until(oldest + RATE_WINDOW).await;
        }
    }

    async fn dispatch_once(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let _permit = self.permits.acquire().await.expect("semaphore never closed");
        let started = self.claim_slot().await;
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let now_in_flight = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now_in_flight, Ordering::SeqCst);
        let result = self.provider.complete(request).await;
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        self.trace.lock().push(DispatchRecord {
            id,
            dispatched: started.duration_since(self.epoch),
            completed: Instant::now().duration_since(self.epoch),
            ok: result.is_ok(),
        });
        result
    }

    /// Sends a request, retrying transient errors per the policy.
    pub async fn send(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let mut attempt = 1;
        loop {
            match self.dispatch_once(request).await {
                Err(ProviderError::Transient(msg)) if attempt < self.policy.retry.max_attempts => {
                    tracing::debug!(attempt, error = %msg, "retrying provider request");
                    tokio::time::sleep(self.policy.retry.backoff(attempt)).await;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Largest number of dispatches inside any half-open window `[t, t + 60s)`
/// that starts at a dispatch time.
pub fn max_window_count(trace: &[DispatchRecord]) -> usize {
    let mut times: Vec<Duration> = trace.iter().map(|r| r.dispatched).collect();
    times.sort();
    let mut best = 0;
    let mut hi = 0;
    for lo in 0..times.len() {
        while hi < times.len() && times[hi] < times[lo] + RATE_WINDOW {
            hi += 1;
        }
        best = best.max(hi - lo);
    }
    best
}

/// Largest number of requests simultaneously in flight according to the trace.
/// A request completing at the same instant another is dispatched does not overlap it.
pub fn max_concurrency(trace: &[DispatchRecord]) -> usize {
    let mut events: Vec<(Duration, i32)> = Vec::with_capacity(trace.len() * 2);
    for r in trace {
        events.push((r.dispatched, 1));
        events.push((r.completed, -1));
    }
    events.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut cur = 0i32;
    let mut best = 0i32;
    for (_, d) in events {
        cur += d;
        best = best.max(cur);
    }
    best as usize
}
