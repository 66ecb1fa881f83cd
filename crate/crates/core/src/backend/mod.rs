//! Generation and scoring services.
//!
//! Every neural component sits behind [`Backend`]. Two implementations ship:
//! [`MockBackend`], a pure function of `(request, seed)`, and [`HttpBackend`],
//! which speaks the JSON wire protocol served by [`serve`].

mod http;
mod mock;
mod server;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rewards::{Severity, SpanAnnotation};

pub use http::{BackendSettings, ConcurrencyLimiter, HttpBackend, Permit, RetryPolicy, TokenBucket};
pub use mock::{mock_translate, MockBackend, SCORER_AUTOMQM, SCORER_CHRF, SCORER_METRICX, SCORER_METRICX_QE, SCORER_NATURALNESS};
pub use server::{serve, MockServer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Decode {
    Greedy,
    Sample {
        temperature: f64,
        /// Extra sampling knobs (top-p, top-k, ...) passed through untouched.
        #[serde(flatten)]
        extra: BTreeMap<String, serde_json::Value>,
    },
}

impl Decode {
    pub fn sample(temperature: f64) -> Self {
        Decode::Sample {
            temperature,
            extra: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub prompt: String,
    pub decode: Decode,
    pub num_samples: usize,
    pub max_tokens: usize,
}

impl GenRequest {
    pub fn greedy(prompt: impl Into<String>, max_tokens: usize) -> Self {
        Self {
            prompt: prompt.into(),
            decode: Decode::Greedy,
            num_samples: 1,
            max_tokens,
        }
    }

    pub fn sampled(prompt: impl Into<String>, temperature: f64, num_samples: usize, max_tokens: usize) -> Self {
        Self {
            prompt: prompt.into(),
            decode: Decode::sample(temperature),
            num_samples,
            max_tokens,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::Validation("num_samples must be >= 1".into()));
        }
        if self.max_tokens == 0 {
            return Err(Error::Validation("max_tokens must be >= 1".into()));
        }
        match &self.decode {
            Decode::Greedy if self.num_samples != 1 => {
                Err(Error::Validation("greedy decoding implies num_samples == 1".into()))
            }
            Decode::Sample { temperature, .. } if !(*temperature > 0.0) => {
                Err(Error::Validation("sampling temperature must be > 0".into()))
            }
            _ => Ok(()),
        }
    }

    /// Stable identifier derived from the request content; reused across retries.
    pub fn request_id(&self) -> String {
        content_id(self)
    }
}

/// One generated sample, or the backend's refusal for that slot.
pub type SampleSlot = std::result::Result<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub source: String,
    pub hypothesis: String,
    pub reference: Option<String>,
    pub scorer_id: String,
}

impl ScoreRequest {
    pub fn qe(source: impl Into<String>, hypothesis: impl Into<String>, scorer_id: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            hypothesis: hypothesis.into(),
            reference: None,
            scorer_id: scorer_id.into(),
        }
    }

    pub fn request_id(&self) -> String {
        content_id(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanJudgement {
    pub spans: Vec<SpanAnnotation>,
    pub scorer_id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub trait Backend: Send + Sync {
    /// Returns exactly `req.num_samples` slots, in backend order.
    fn generate(&self, req: &GenRequest) -> Result<Vec<SampleSlot>>;

    /// Raw scorer-native score; no rescaling.
    fn score(&self, req: &ScoreRequest) -> Result<f64>;

    fn judge_spans(&self, req: &ScoreRequest) -> Result<SpanJudgement>;
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn generate(&self, req: &GenRequest) -> Result<Vec<SampleSlot>> {
        (**self).generate(req)
    }
    fn score(&self, req: &ScoreRequest) -> Result<f64> {
        (**self).score(req)
    }
    fn judge_spans(&self, req: &ScoreRequest) -> Result<SpanJudgement> {
        (**self).judge_spans(req)
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn generate(&self, req: &GenRequest) -> Result<Vec<SampleSlot>> {
        (**self).generate(req)
    }
    fn score(&self, req: &ScoreRequest) -> Result<f64> {
        (**self).score(req)
    }
    fn judge_spans(&self, req: &ScoreRequest) -> Result<SpanJudgement> {
        (**self).judge_spans(req)
    }
}

// ---- wire format ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireGenerateRequest {
    pub prompt: String,
    pub decode: Decode,
    pub num_samples: usize,
    pub max_tokens: usize,
    pub request_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireSample {
    Text(String),
    Error { error: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireGenerateResponse {
    pub samples: Vec<WireSample>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireScoreResponse {
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireSpan {
    pub start: i64,
    pub end: i64,
    pub severity: String,
    #[serde(default)]
    pub category: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireJudgeResponse {
    pub spans: Vec<WireSpan>,
}

impl From<&SpanAnnotation> for WireSpan {
    fn from(s: &SpanAnnotation) -> Self {
        WireSpan {
            start: s.start as i64,
            end: s.end as i64,
            severity: s.severity.as_str().to_string(),
            category: s.category.clone(),
        }
    }
}

/// Converts generation slots to their wire form.
pub fn to_wire_samples(slots: &[SampleSlot]) -> Vec<WireSample> {
    slots
        .iter()
        .map(|s| match s {
            Ok(t) => WireSample::Text(t.clone()),
            Err(e) => WireSample::Error { error: e.clone() },
        })
        .collect()
}

/// Maps a wire response onto exactly `expected` slots.
///
/// Missing trailing samples become error slots; surplus samples are a
/// protocol violation.
pub fn from_wire_samples(samples: Vec<WireSample>, expected: usize, request_id: &str) -> Result<Vec<SampleSlot>> {
    if samples.len() > expected {
        return Err(Error::Protocol {
            message: format!(
                "request {request_id}: backend returned {} samples, {expected} requested",
                samples.len()
            ),
            payload: serde_json::to_string(&samples).unwrap_or_default(),
        });
    }
    let mut slots: Vec<SampleSlot> = samples
        .into_iter()
        .map(|s| match s {
            WireSample::Text(t) => Ok(t),
            WireSample::Error { error } => Err(error),
        })
        .collect();
    if slots.len() < expected {
        log::warn!(
            "request {request_id}: backend returned {} of {expected} samples",
            slots.len()
        );
        slots.resize_with(expected, || Err("sample missing from backend response".to_string()));
    }
    Ok(slots)
}

/// Validates raw spans against the hypothesis, clamping out-of-range ends.
///
/// Spans that are empty after clamping are dropped. Every adjustment is
/// recorded in the returned warnings.
pub fn clamp_spans(raw: &[WireSpan], hypothesis: &str, scorer_id: &str) -> SpanJudgement {
    let len = hypothesis.chars().count() as i64;
    let mut spans = Vec::with_capacity(raw.len());
    let mut warnings = Vec::new();
    for w in raw {
        let start = w.start.clamp(0, len);
        let end = w.end.clamp(0, len);
        if (start, end) != (w.start, w.end) {
            let msg = format!(
                "span [{}, {}) clamped to [{start}, {end}) for hypothesis of length {len}",
                w.start, w.end
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        if start >= end {
            let msg = format!("span [{}, {}) dropped: empty after clamping", w.start, w.end);
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        spans.push(SpanAnnotation {
            start: start as usize,
            end: end as usize,
            severity: Severity::from(w.severity.as_str()),
            category: w.category.clone(),
            source_judge: scorer_id.to_string(),
        });
    }
    SpanJudgement {
        spans,
        scorer_id: scorer_id.to_string(),
        warnings,
    }
}

fn content_id<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("request serializes");
    let digest = Sha256::digest(&bytes);
    digest[..12].iter().map(|b| format!("{b:02x}")).collect()
}
