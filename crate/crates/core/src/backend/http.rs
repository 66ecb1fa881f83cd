use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    clamp_spans, from_wire_samples, Backend, GenRequest, SampleSlot, ScoreRequest, SpanJudgement,
    WireGenerateRequest, WireGenerateResponse, WireJudgeResponse, WireScoreResponse,
};
use crate::error::{Error, Result};

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct ConcurrencyLimiter {
    cap: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
    peak: AtomicUsize,
}

pub struct Permit<'a> {
    limiter: &'a ConcurrencyLimiter,
}

impl ConcurrencyLimiter {
    pub fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            peak: AtomicUsize::new(0),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.cap {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        self.peak.fetch_max(*n, Ordering::Relaxed);
        Permit { limiter: self }
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    /// Highest number of simultaneously held permits observed so far.
    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::Relaxed)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.in_flight.lock().unwrap();
        *n -= 1;
        self.limiter.freed.notify_one();
    }
}

/// Token-bucket rate limiter: `rate` requests per second, bursts up to `burst`.
#[derive(Debug)]
pub struct TokenBucket {
    rate: f64,
    burst: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(rate: f64, burst: usize) -> Self {
        let burst = burst.max(1) as f64;
        Self {
            rate,
            burst,
            state: Mutex::new((burst, Instant::now())),
        }
    }

    pub fn take(&self) {
        loop {
            let wait = {
                let mut st = self.state.lock().unwrap();
                let now = Instant::now();
                let refill = now.duration_since(st.1).as_secs_f64() * self.rate;
                st.0 = (st.0 + refill).min(self.burst);
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - st.0) / self.rate)
            };
            std::thread::sleep(wait);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay_ms: 200,
            max_delay_ms: 10_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based): base * 2^(attempt-1), capped.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64 << (attempt.saturating_sub(1)).min(20);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

/// Connection settings, usually read from the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSettings {
    pub generate_url: String,
    pub score_url: String,
    pub api_key_header: Option<String>,
    pub api_key: Option<String>,
    pub concurrency: usize,
    pub retry: RetryPolicy,
    pub timeout_secs: u64,
    /// Requests per second; unlimited when absent.
    pub rate_limit: Option<f64>,
}

impl Default for BackendSettings {
    fn default() -> Self {
        Self {
            generate_url: "http://127.0.0.1:8080".into(),
            score_url: "http://127.0.0.1:8080".into(),
            api_key_header: None,
            api_key: None,
            concurrency: 8,
            retry: RetryPolicy::default(),
            timeout_secs: 120,
            rate_limit: None,
        }
    }
}

impl BackendSettings {
    /// Overlays `MTDISTILL_*` environment variables on `self`.
    ///
    /// `MTDISTILL_BACKEND_URL` sets both endpoints; `MTDISTILL_GENERATE_URL`
    /// and `MTDISTILL_SCORE_URL` override them individually.
    pub fn with_env(mut self) -> Result<Self> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        if let Some(u) = var("MTDISTILL_BACKEND_URL") {
            self.generate_url = u.clone();
            self.score_url = u;
        }
        if let Some(u) = var("MTDISTILL_GENERATE_URL") {
            self.generate_url = u;
        }
        if let Some(u) = var("MTDISTILL_SCORE_URL") {
            self.score_url = u;
        }
        if let Some(h) = var("MTDISTILL_API_KEY_HEADER") {
            self.api_key_header = Some(h);
        }
        if let Some(k) = var("MTDISTILL_API_KEY") {
            self.api_key = Some(k);
        }
        if let Some(c) = var("MTDISTILL_CONCURRENCY") {
            self.concurrency = c
                .parse()
                .map_err(|_| Error::Config(format!("MTDISTILL_CONCURRENCY: invalid integer `{c}`")))?;
        }
        if let Some(r) = var("MTDISTILL_MAX_RETRIES") {
            self.retry.max_attempts = r
                .parse()
                .map_err(|_| Error::Config(format!("MTDISTILL_MAX_RETRIES: invalid integer `{r}`")))?;
        }
        Ok(self)
    }
}

/// Error body returned by the server for rejected requests.
#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct WireError {
    pub error: String,
    #[serde(default)]
    pub kind: String,
}

pub struct HttpBackend {
    agent: ureq::Agent,
    settings: BackendSettings,
    limiter: ConcurrencyLimiter,
    bucket: Option<TokenBucket>,
}

enum Attempt<T> {
    Done(T),
    Retry(String),
    Fail(Error),
}

impl HttpBackend {
    pub fn new(settings: BackendSettings) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(settings.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            limiter: ConcurrencyLimiter::new(settings.concurrency),
            bucket: settings.rate_limit.map(|r| TokenBucket::new(r, settings.concurrency)),
            settings,
        }
    }

    pub fn limiter(&self) -> &ConcurrencyLimiter {
        &self.limiter
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, base: &str, path: &str, body: &B, request_id: &str) -> Result<T> {
        let url = format!("{}{}", base.trim_end_matches('/'), path);
        let policy = self.settings.retry;
        let attempts = policy.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                let d = policy.delay(attempt - 1);
                log::debug!("request {request_id}: retry {attempt}/{attempts} in {d:?}");
                std::thread::sleep(d);
            }
            match self.attempt(&url, body, request_id) {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(msg) => {
                    log::warn!("request {request_id} to {url} failed: {msg}");
                    last = msg;
                }
            }
        }
        Err(Error::Transport {
            request_id: request_id.to_string(),
            message: format!("gave up after {attempts} attempts: {last}"),
        })
    }

    fn attempt<B: Serialize, T: DeserializeOwned>(&self, url: &str, body: &B, request_id: &str) -> Attempt<T> {
        if let Some(b) = &self.bucket {
            b.take();
        }
        let _permit = self.limiter.acquire();
        let mut req = self.agent.post(url).header("x-request-id", request_id);
        if let (Some(h), Some(k)) = (&self.settings.api_key_header, &self.settings.api_key) {
            req = req.header(h.as_str(), k.as_str());
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        match status {
            200..=299 => match serde_json::from_str(&text) {
                Ok(v) => Attempt::Done(v),
                Err(e) => Attempt::Fail(Error::Protocol {
                    message: e.to_string(),
                    payload: text,
                }),
            },
            429 | 500..=599 => Attempt::Retry(format!("HTTP {status}: {text}")),
            _ => {
                let err = serde_json::from_str::<WireError>(&text).ok();
                Attempt::Fail(match err {
                    Some(w) if w.kind == "config" => Error::Config(w.error),
                    Some(w) if w.kind == "validation" => Error::Validation(w.error),
                    _ => Error::Transport {
                        request_id: request_id.to_string(),
                        message: format!("HTTP {status}: {text}"),
                    },
                })
            }
        }
    }
}

impl Backend for HttpBackend {
    fn generate(&self, req: &GenRequest) -> Result<Vec<SampleSlot>> {
        req.validate()?;
        let request_id = req.request_id();
        let wire = WireGenerateRequest {
            prompt: req.prompt.clone(),
            decode: req.decode.clone(),
            num_samples: req.num_samples,
            max_tokens: req.max_tokens,
            request_id: request_id.clone(),
        };
        let resp: WireGenerateResponse = self.post(&self.settings.generate_url, "/v1/generate", &wire, &request_id)?;
        from_wire_samples(resp.samples, req.num_samples, &request_id)
    }

    fn score(&self, req: &ScoreRequest) -> Result<f64> {
        let request_id = req.request_id();
        let resp: WireScoreResponse = self.post(&self.settings.score_url, "/v1/score", req, &request_id)?;
        Ok(resp.score)
    }

    fn judge_spans(&self, req: &ScoreRequest) -> Result<SpanJudgement> {
        let request_id = req.request_id();
        let resp: WireJudgeResponse = self.post(&self.settings.score_url, "/v1/judge", req, &request_id)?;
        Ok(clamp_spans(&resp.spans, &req.hypothesis, &req.scorer_id))
    }
}
