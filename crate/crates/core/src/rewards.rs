//! Token-level advantage construction.
//!
//! Sequence-level rewards are broadcast to every token of their sequence;
//! span judgements become per-token penalties. The two are summed and the
//! resulting advantages are whitened across the whole batch.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::metrics::{effective_weights, MqmWeightTable};
use crate::tokenize::{CharSpan, Tokenizer};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Severity {
    Major,
    Minor,
    NonTranslation,
    /// Any label outside the MQM scheme; rejected at scoring time.
    Other(String),
}

impl Severity {
    pub fn as_str(&self) -> &str {
        match self {
            Severity::Major => "major",
            Severity::Minor => "minor",
            Severity::NonTranslation => "non_translation",
            Severity::Other(s) => s,
        }
    }
}

impl From<&str> for Severity {
    fn from(s: &str) -> Self {
        match s.trim().to_ascii_lowercase().as_str() {
            "major" => Severity::Major,
            "minor" => Severity::Minor,
            "non_translation" | "non-translation" | "nontranslation" => Severity::NonTranslation,
            _ => Severity::Other(s.to_string()),
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Severity {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Severity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Severity::from(s.as_str()))
    }
}

/// An error span over a hypothesis, in character offsets `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanAnnotation {
    pub start: usize,
    pub end: usize,
    pub severity: Severity,
    #[serde(default)]
    pub category: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub source_judge: String,
}

impl SpanAnnotation {
    pub fn validate(&self, text_len: usize) -> Result<()> {
        if self.start < self.end && self.end <= text_len {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "span [{}, {}) invalid for text of length {text_len}",
                self.start, self.end
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenAlignment {
    pub offsets: Vec<CharSpan>,
}

impl TokenAlignment {
    pub fn new(offsets: Vec<CharSpan>) -> Result<Self> {
        let ok = offsets.iter().all(|o| o.start < o.end)
            && offsets.windows(2).all(|w| w[0].end <= w[1].start);
        if !ok {
            return Err(Error::Domain(
                "token offsets must be non-empty, ascending and non-overlapping".into(),
            ));
        }
        Ok(Self { offsets })
    }

    pub fn from_text(text: &str, tokenizer: &dyn Tokenizer) -> Self {
        Self {
            offsets: tokenizer.offsets(text),
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// End of the last token; the implied text length when none is given.
    pub fn extent(&self) -> usize {
        self.offsets.last().map_or(0, |o| o.end)
    }
}

#[derive(Debug, Clone, Default)]
pub struct TokenRewards {
    pub values: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Spreads each span's penalty evenly over the tokens it overlaps.
///
/// A span touching no token (e.g. whitespace only) charges its full penalty
/// to the nearest preceding token, or the first token if none precedes it.
pub fn spans_to_token_rewards(
    spans: &[SpanAnnotation],
    align: &TokenAlignment,
    weights: &MqmWeightTable,
) -> Result<TokenRewards> {
    let mut values = vec![0.0; align.len()];
    let mut warnings = Vec::new();
    if spans.is_empty() {
        return Ok(TokenRewards { values, warnings });
    }
    if align.is_empty() {
        return Err(Error::Domain("cannot place span rewards on a sequence with no tokens".into()));
    }
    let penalties = effective_weights(spans, weights)?;
    for (span, w) in spans.iter().zip(penalties) {
        let covered: Vec<usize> = align
            .offsets
            .iter()
            .enumerate()
            .filter(|(_, t)| t.start < span.end && span.start < t.end)
            .map(|(i, _)| i)
            .collect();
        if covered.is_empty() {
            let idx = align
                .offsets
                .iter()
                .rposition(|t| t.end <= span.start)
                .unwrap_or(0);
            let msg = format!(
                "span [{}, {}) overlaps no token; penalty assigned to token {idx}",
                span.start, span.end
            );
            log::warn!("{msg}");
            warnings.push(msg);
            values[idx] -= w;
        } else {
            let share = w / covered.len() as f64;
            for i in covered {
                values[i] -= share;
            }
        }
    }
    Ok(TokenRewards { values, warnings })
}

pub fn broadcast_sequence_reward(value: f64, token_count: usize) -> Result<Vec<f64>> {
    if token_count == 0 {
        return Err(Error::Domain("cannot broadcast a reward over zero tokens".into()));
    }
    Ok(vec![value; token_count])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReward {
    pub source_id: String,
    pub value: f64,
    #[serde(default = "one")]
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenReward {
    pub source_id: String,
    pub values: Vec<f64>,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    #[serde(default)]
    pub sequence_rewards: Vec<SequenceReward>,
    #[serde(default)]
    pub token_rewards: Vec<TokenReward>,
}

/// Weighted sum of broadcast sequence rewards and token reward vectors.
pub fn combine(spec: &RewardSpec, token_count: usize) -> Result<Vec<f64>> {
    if token_count == 0 {
        return Err(Error::Domain("cannot combine rewards over zero tokens".into()));
    }
    let mut out = vec![0.0; token_count];
    for s in &spec.sequence_rewards {
        let contribution = s.weight * s.value;
        out.iter_mut().for_each(|x| *x += contribution);
    }
    for t in &spec.token_rewards {
        if t.values.len() != token_count {
            return Err(Error::Domain(format!(
                "token reward `{}` has {} entries, sequence has {token_count} tokens",
                t.source_id,
                t.values.len()
            )));
        }
        for (x, v) in out.iter_mut().zip(&t.values) {
            *x += t.weight * v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    /// Statistics pooled over every token in the batch.
    #[default]
    Batch,
    PerSequence,
}

pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageBatch {
    pub sequences: Vec<Vec<f64>>,
    pub normalized: bool,
    pub epsilon: f64,
}

impl AdvantageBatch {
    pub fn new(sequences: Vec<Vec<f64>>) -> Self {
        Self {
            sequences,
            normalized: false,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn token_count(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }
}

fn moments<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mut mean = values.clone().sum::<f64>() / n;
    // Summation rounding would otherwise leave a constant batch ~1 ulp off its
    // mean, which epsilon then amplifies.
    if let Some(&first) = values.clone().next() {
        if values.clone().all(|&x| x == first) {
            mean = first;
        }
    }
    let var = values.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Whitens advantages: `x -> (x - mean) / (std + epsilon)`, population std.
pub fn batch_normalize(batch: &AdvantageBatch) -> Result<AdvantageBatch> {
    batch_normalize_scoped(batch, NormScope::Batch)
}

pub fn batch_normalize_scoped(batch: &AdvantageBatch, scope: NormScope) -> Result<AdvantageBatch> {
    if batch.token_count() == 0 {
        return Err(Error::Domain("batch normalization needs at least one token".into()));
    }
    let eps = batch.epsilon;
    let sequences = match scope {
        NormScope::Batch => {
            let (mean, std) = moments(batch.sequences.iter().flatten());
            batch
                .sequences
                .iter()
                .map(|seq| seq.iter().map(|x| (x - mean) / (std + eps)).collect())
                .collect()
        }
        NormScope::PerSequence => batch
            .sequences
            .iter()
            .map(|seq| {
                if seq.is_empty() {
                    return Vec::new();
                }
                let (mean, std) = moments(seq.iter());
                seq.iter().map(|x| (x - mean) / (std + eps)).collect()
            })
            .collect(),
    };
    Ok(AdvantageBatch {
        sequences,
        normalized: true,
        epsilon: eps,
    })
}

/// One input record of the `rewards compute` stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardInput {
    pub sequence_id: String,
    pub tokens: Vec<CharSpan>,
    /// Hypothesis length in characters; defaults to the end of the last token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_len: Option<usize>,
    #[serde(default)]
    pub spans: Vec<SpanAnnotation>,
    #[serde(default)]
    pub sequence_rewards: Vec<SequenceReward>,
    #[serde(default)]
    pub token_rewards: Vec<TokenReward>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardOutput {
    pub sequence_id: String,
    pub advantages: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardsConfig {
    pub epsilon: f64,
    pub scope: NormScope,
    pub span_source_id: String,
    /// Weight of the span-derived token rewards in the combination.
    pub span_weight: f64,
    pub weights: MqmWeightTable,
    /// When false, the raw combined advantages are emitted.
    pub normalize: bool,
}

impl Default for RewardsConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            scope: NormScope::Batch,
            span_source_id: "spans".into(),
            span_weight: 1.0,
            weights: MqmWeightTable::default(),
            normalize: true,
        }
    }
}

/// Combines and normalizes a whole batch of reward records.
pub fn compute_advantages(inputs: &[RewardInput], cfg: &RewardsConfig) -> Result<Vec<RewardOutput>> {
    let mut combined = Vec::with_capacity(inputs.len());
    for input in inputs {
        let align = TokenAlignment::new(input.tokens.clone())
            .map_err(|e| Error::Domain(format!("{}: {e}", input.sequence_id)))?;
        let text_len = input.text_len.unwrap_or_else(|| align.extent());
        for s in &input.spans {
            s.validate(text_len)
                .map_err(|e| Error::Domain(format!("{}: {e}", input.sequence_id)))?;
        }
        let mut spec = RewardSpec {
            sequence_rewards: input.sequence_rewards.clone(),
            token_rewards: input.token_rewards.clone(),
        };
        if !input.spans.is_empty() {
            let tr = spans_to_token_rewards(&input.spans, &align, &cfg.weights)?;
            spec.token_rewards.push(TokenReward {
                source_id: cfg.span_source_id.clone(),
                values: tr.values,
                weight: cfg.span_weight,
            });
        }
        let adv = combine(&spec, align.len())
            .map_err(|e| Error::Domain(format!("{}: {e}", input.sequence_id)))?;
        combined.push(adv);
    }
    let batch = AdvantageBatch::new(combined).with_epsilon(cfg.epsilon);
    let batch = if cfg.normalize {
        batch_normalize_scoped(&batch, cfg.scope)?
    } else {
        batch
    };
    Ok(inputs
        .iter()
        .zip(batch.sequences)
        .map(|(i, advantages)| RewardOutput {
            sequence_id: i.sequence_id.clone(),
            advantages,
        })
        .collect())
}
