//! ChrF, MQM span weighting and reward rescaling.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rewards::{Severity, SpanAnnotation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChrFConfig {
    pub max_order: usize,
    pub beta: f64,
    pub strip_whitespace: bool,
}

impl Default for ChrFConfig {
    fn default() -> Self {
        Self {
            max_order: 6,
            beta: 2.0,
            strip_whitespace: true,
        }
    }
}

fn ngram_counts(chars: &[char], n: usize) -> HashMap<&[char], usize> {
    let mut counts = HashMap::new();
    if chars.len() >= n {
        for w in chars.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Character n-gram F-score in `[0, 100]`.
///
/// Precision and recall are averaged over the orders for which the reference
/// has at least one n-gram, then combined as F-beta.
pub fn chrf(hypothesis: &str, reference: &str, cfg: &ChrFConfig) -> Result<f64> {
    if cfg.max_order == 0 || !(cfg.beta > 0.0) {
        return Err(Error::Config("chrf requires max_order >= 1 and beta > 0".into()));
    }
    let prep = |s: &str| -> Vec<char> {
        if cfg.strip_whitespace {
            s.chars().filter(|c| !c.is_whitespace()).collect()
        } else {
            s.chars().collect()
        }
    };
    let hyp = prep(hypothesis);
    let refr = prep(reference);
    if refr.is_empty() {
        return Err(Error::Domain("chrf reference must be non-empty".into()));
    }

    let (mut p_sum, mut r_sum, mut orders) = (0.0, 0.0, 0usize);
    for n in 1..=cfg.max_order {
        let ref_counts = ngram_counts(&refr, n);
        let ref_total: usize = ref_counts.values().sum();
        if ref_total == 0 {
            continue;
        }
        let hyp_counts = ngram_counts(&hyp, n);
        let hyp_total: usize = hyp_counts.values().sum();
        let matches: usize = hyp_counts
            .iter()
            .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
            .sum();
        if hyp_total > 0 {
            p_sum += matches as f64 / hyp_total as f64;
        }
        r_sum += matches as f64 / ref_total as f64;
        orders += 1;
    }
    let p = p_sum / orders as f64;
    let r = r_sum / orders as f64;
    if p + r == 0.0 {
        return Ok(0.0);
    }
    let b2 = cfg.beta * cfg.beta;
    let denom = b2 * p + r;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * (1.0 + b2) * p * r / denom)
}

/// Per-span MQM penalties. Defaults: non-translation 25, major 5, minor 1,
/// minor fluency/punctuation 0.1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MqmWeightTable {
    pub non_translation: f64,
    pub major: f64,
    pub minor: f64,
    pub minor_fluency_punctuation: f64,
}

impl Default for MqmWeightTable {
    fn default() -> Self {
        Self {
            non_translation: 25.0,
            major: 5.0,
            minor: 1.0,
            minor_fluency_punctuation: 0.1,
        }
    }
}

impl MqmWeightTable {
    pub fn validate(&self) -> Result<()> {
        let ordered = self.non_translation >= self.major
            && self.major >= self.minor
            && self.minor >= self.minor_fluency_punctuation
            && self.minor_fluency_punctuation >= 0.0;
        if ordered {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "MQM weights must satisfy non_translation >= major >= minor >= minor_fluency_punctuation >= 0, got {self:?}"
            )))
        }
    }
}

fn normalize_category(category: &str) -> String {
    category
        .trim()
        .trim_end_matches('!')
        .to_ascii_lowercase()
        .replace([' ', '_'], "-")
}

fn is_non_translation(span: &SpanAnnotation) -> bool {
    span.severity == Severity::NonTranslation || normalize_category(&span.category) == "non-translation"
}

fn is_fluency_punctuation(category: &str) -> bool {
    matches!(
        normalize_category(category).as_str(),
        "fluency/punctuation" | "fluency-punctuation" | "punctuation"
    )
}

/// The penalty each span actually contributes.
///
/// If any non-translation span is present, the segment's total penalty is
/// `non_translation`, split evenly across those spans; every other span gets 0.
pub fn effective_weights(spans: &[SpanAnnotation], weights: &MqmWeightTable) -> Result<Vec<f64>> {
    let nt = spans.iter().filter(|s| is_non_translation(s)).count();
    spans
        .iter()
        .map(|s| {
            if let Severity::Other(sev) = &s.severity {
                return Err(Error::Scoring(format!(
                    "unknown severity/category pair ({sev}, {}) for span [{}, {})",
                    s.category, s.start, s.end
                )));
            }
            if nt > 0 {
                return Ok(if is_non_translation(s) {
                    weights.non_translation / nt as f64
                } else {
                    0.0
                });
            }
            Ok(match s.severity {
                Severity::Major => weights.major,
                Severity::Minor if is_fluency_punctuation(&s.category) => weights.minor_fluency_punctuation,
                Severity::Minor => weights.minor,
                Severity::NonTranslation | Severity::Other(_) => unreachable!(),
            })
        })
        .collect()
}

/// Segment-level MQM score (0 is best).
pub fn mqm_score(spans: &[SpanAnnotation], weights: &MqmWeightTable) -> Result<f64> {
    Ok(effective_weights(spans, weights)?.iter().sum())
}

/// Mean of segment scores; 0 for an empty document.
pub fn mqm_document_score(segment_scores: &[f64]) -> f64 {
    if segment_scores.is_empty() {
        0.0
    } else {
        segment_scores.iter().sum::<f64>() / segment_scores.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RescaleTransform {
    /// `5.0 - s`, turning a 0-best / 25-worst score into higher-is-better.
    MetricxQe,
    /// `2 * s`.
    Chrf,
    Identity,
}

pub fn rescale(score: f64, t: RescaleTransform) -> f64 {
    match t {
        RescaleTransform::MetricxQe => 5.0 - score,
        RescaleTransform::Chrf => 2.0 * score,
        RescaleTransform::Identity => score,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(sev: Severity, cat: &str) -> SpanAnnotation {
        SpanAnnotation {
            start: 0,
            end: 1,
            severity: sev,
            category: cat.into(),
            source_judge: String::new(),
        }
    }

    #[test]
    fn chrf_extremes() {
        let cfg = ChrFConfig::default();
        assert_eq!(chrf("Hallo Welt", "Hallo Welt", &cfg).unwrap(), 100.0);
        assert_eq!(chrf("xyz", "abc", &cfg).unwrap(), 0.0);
        assert_eq!(chrf("", "abc", &cfg).unwrap(), 0.0);
        assert!(matches!(chrf("abc", "", &cfg), Err(Error::Domain(_))));
        assert!(matches!(chrf("abc", "   ", &cfg), Err(Error::Domain(_))));
    }

    #[test]
    fn chrf_whitespace_invariant_when_stripped() {
        let cfg = ChrFConfig::default();
        let a = chrf("the cat sat", "the cat sat down", &cfg).unwrap();
        let b = chrf("thecat  sat", "the cat satdown", &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn chrf_abcd_abce_order_two() {
        // order 1: P = R = 3/4. order 2: P = R = 2/3. Averages equal, so F = P.
        let cfg = ChrFConfig {
            max_order: 2,
            ..ChrFConfig::default()
        };
        let got = chrf("abcd", "abce", &cfg).unwrap();
        let want = 100.0 * (0.75 + 2.0 / 3.0) / 2.0;
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn mqm_defaults() {
        let w = MqmWeightTable::default();
        assert_eq!(mqm_score(&[], &w).unwrap(), 0.0);
        let s = [span(Severity::Major, "accuracy/mistranslation"), span(Severity::Minor, "style")];
        assert_eq!(mqm_score(&s, &w).unwrap(), 6.0);
        let s = [span(Severity::Minor, "Fluency/Punctuation")];
        assert!((mqm_score(&s, &w).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn non_translation_suppresses_others() {
        let w = MqmWeightTable::default();
        let s = [
            span(Severity::NonTranslation, "non-translation"),
            span(Severity::Major, "accuracy"),
            span(Severity::Major, "fluency"),
        ];
        assert_eq!(mqm_score(&s, &w).unwrap(), 25.0);
        // category spelled the MQM way with a major severity counts too
        let s = [span(Severity::Major, "Non-translation!"), span(Severity::Minor, "style")];
        assert_eq!(mqm_score(&s, &w).unwrap(), 25.0);
    }

    #[test]
    fn unknown_severity_is_a_scoring_error() {
        let s = [span(Severity::Other("critical".into()), "accuracy")];
        let err = mqm_score(&s, &MqmWeightTable::default()).unwrap_err();
        assert!(err.to_string().contains("critical"));
    }

    #[test]
    fn weight_table_ordering() {
        assert!(MqmWeightTable::default().validate().is_ok());
        let bad = MqmWeightTable {
            major: 30.0,
            ..MqmWeightTable::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rescale_formulas() {
        assert_eq!(rescale(0.0, RescaleTransform::MetricxQe), 5.0);
        assert_eq!(rescale(25.0, RescaleTransform::MetricxQe), -20.0);
        assert!((rescale(43.7, RescaleTransform::Chrf) - 87.4).abs() < 1e-12);
        assert_eq!(rescale(1.25, RescaleTransform::Identity), 1.25);
    }

    #[test]
    fn document_score_is_mean() {
        assert_eq!(mqm_document_score(&[]), 0.0);
        assert_eq!(mqm_document_score(&[5.0, 0.0, 0.0, 0.0, 0.0]), 1.0);
    }
}
