//! Deterministic stand-ins for the generation model, QE metric and span judges.
//!
//! Translation is modelled as a fixed word-to-pseudo-word mapping. Each
//! sample corrupts a seeded random fraction of its words, so sample quality
//! varies and the QE mock (which knows the ideal mapping) can rank samples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{clamp_spans, Backend, Decode, GenRequest, SampleSlot, ScoreRequest, SpanJudgement, WireSpan};
use crate::error::{Error, Result};
use crate::metrics::{chrf, ChrFConfig};
use crate::prompting::prompt_text;
use crate::tokenize::{Tokenizer, WhitespacePunctTokenizer};

/// QE metric on a 0 (best) to 25 (worst) scale; ignores any reference.
pub const SCORER_METRICX_QE: &str = "metricx-qe";
/// Same scale; compares against the reference when one is supplied.
pub const SCORER_METRICX: &str = "metricx";
/// Local ChrF against the reference, 0..100.
pub const SCORER_CHRF: &str = "chrf";
pub const SCORER_AUTOMQM: &str = "automqm-qe";
pub const SCORER_NATURALNESS: &str = "naturalness";

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ne", "ru", "ta", "vo", "shi", "en", "ar", "du", "pe", "ki", "sa", "zo", "ul",
];

const GREEDY_NOISE: f64 = 0.15;
const MAX_SAMPLE_NOISE: f64 = 0.6;

#[derive(Debug, Clone)]
pub struct MockBackend {
    seed: u64,
    planted: Option<Vec<WireSpan>>,
    commentary_rate: f64,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            planted: None,
            commentary_rate: 0.03,
        }
    }

    /// Makes every judge call return exactly these spans (subject to clamping).
    pub fn with_planted_spans(mut self, spans: Vec<WireSpan>) -> Self {
        self.planted = Some(spans);
        self
    }

    /// Probability that a sample is prefixed with chatty commentary.
    pub fn with_commentary_rate(mut self, rate: f64) -> Self {
        self.commentary_rate = rate;
        self
    }

    fn rng(&self, parts: &[&[u8]]) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p);
        }
        let digest: [u8; 32] = h.finalize().into();
        ChaCha8Rng::from_seed(digest)
    }

    fn corrupt(&self, text: &str, noise: f64, rng: &mut ChaCha8Rng) -> String {
        let mut out = String::with_capacity(text.len() + 8);
        for_each_piece(text, |piece, is_word| {
            if is_word {
                if rng.gen_bool(noise) {
                    out.push_str(&random_word(rng, piece.chars().count()));
                } else {
                    out.push_str(&pseudo_word(piece));
                }
            } else {
                out.push_str(piece);
            }
        });
        out
    }

    fn ideal_distance(&self, source: &str, hypothesis: &str) -> f64 {
        if hypothesis.trim().is_empty() {
            return 25.0;
        }
        let ideal = mock_translate(source);
        if ideal.trim().is_empty() {
            return 25.0;
        }
        distance(hypothesis, &ideal)
    }
}

fn distance(hypothesis: &str, reference: &str) -> f64 {
    match chrf(hypothesis, reference, &ChrFConfig::default()) {
        Ok(c) => (25.0 * (1.0 - c / 100.0)).clamp(0.0, 25.0),
        Err(_) => 25.0,
    }
}

/// Splits `text` into maximal word and non-word pieces, in order.
fn for_each_piece(text: &str, mut f: impl FnMut(&str, bool)) {
    let mut cursor = 0usize;
    let mut byte_of = text.char_indices().map(|(b, _)| b).collect::<Vec<_>>();
    byte_of.push(text.len());
    for span in WhitespacePunctTokenizer.offsets(text) {
        let (s, e) = (byte_of[span.start], byte_of[span.end]);
        if s > cursor {
            f(&text[cursor..s], false);
        }
        let piece = &text[s..e];
        let is_word = piece.chars().any(char::is_alphanumeric);
        f(piece, is_word);
        cursor = e;
    }
    if cursor < text.len() {
        f(&text[cursor..], false);
    }
}

fn word_hash(word: &str) -> u64 {
    let d = Sha256::digest(word.to_lowercase().as_bytes());
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

fn pseudo_word(word: &str) -> String {
    if word.chars().all(|c| c.is_ascii_digit()) {
        return word.to_string();
    }
    let mut h = word_hash(word);
    let n = 1 + word.chars().count().div_ceil(3);
    let mut out = String::new();
    for _ in 0..n {
        out.push_str(SYLLABLES[(h % 16) as usize]);
        h = h.rotate_right(4) ^ 0x9e37_79b9_7f4a_7c15;
    }
    if word.chars().next().is_some_and(char::is_uppercase) {
        capitalize(&out)
    } else {
        out
    }
}

fn random_word(rng: &mut ChaCha8Rng, len: usize) -> String {
    let n = 1 + len.div_ceil(3);
    (0..n).map(|_| SYLLABLES[rng.gen_range(0..16)]).collect()
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// The mock's ideal translation of `text`: every word mapped to its pseudo-word.
pub fn mock_translate(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for_each_piece(text, |piece, is_word| {
        if is_word {
            out.push_str(&pseudo_word(piece));
        } else {
            out.push_str(piece);
        }
    });
    out
}

impl Backend for MockBackend {
    fn generate(&self, req: &GenRequest) -> Result<Vec<SampleSlot>> {
        req.validate()?;
        let text = prompt_text(&req.prompt);
        let out = match &req.decode {
            Decode::Greedy => {
                let mut rng = self.rng(&[b"greedy", req.prompt.as_bytes()]);
                vec![Ok(self.corrupt(text, GREEDY_NOISE, &mut rng))]
            }
            Decode::Sample { temperature, .. } => (0..req.num_samples)
                .map(|i| {
                    let mut rng = self.rng(&[b"sample", req.prompt.as_bytes(), &(i as u64).to_le_bytes()]);
                    let noise = (rng.gen::<f64>() * MAX_SAMPLE_NOISE * temperature).min(1.0);
                    let mut s = self.corrupt(text, noise, &mut rng);
                    if rng.gen_bool(self.commentary_rate.clamp(0.0, 1.0)) {
                        s = format!("Translation: {s}");
                    }
                    Ok(s)
                })
                .collect(),
        };
        Ok(out)
    }

    fn score(&self, req: &ScoreRequest) -> Result<f64> {
        match req.scorer_id.as_str() {
            SCORER_METRICX_QE => Ok(self.ideal_distance(&req.source, &req.hypothesis)),
            SCORER_METRICX => match &req.reference {
                Some(r) if !req.hypothesis.trim().is_empty() => Ok(distance(&req.hypothesis, r)),
                Some(_) => Ok(25.0),
                None => Ok(self.ideal_distance(&req.source, &req.hypothesis)),
            },
            SCORER_CHRF => {
                let reference = req
                    .reference
                    .as_deref()
                    .ok_or_else(|| Error::Validation("chrf scorer requires a reference".into()))?;
                chrf(&req.hypothesis, reference, &ChrFConfig::default())
            }
            other => Err(Error::Config(format!("unknown scorer_id `{other}`"))),
        }
    }

    fn judge_spans(&self, req: &ScoreRequest) -> Result<SpanJudgement> {
        if req.scorer_id != SCORER_AUTOMQM && req.scorer_id != SCORER_NATURALNESS {
            return Err(Error::Config(format!(
                "scorer_id `{}` is not span-capable",
                req.scorer_id
            )));
        }
        if let Some(planted) = &self.planted {
            return Ok(clamp_spans(planted, &req.hypothesis, &req.scorer_id));
        }
        // Flag every word that differs from the ideal translation at the same position.
        let ideal = mock_translate(&req.source);
        let tok = WhitespacePunctTokenizer;
        let hyp_chars: Vec<char> = req.hypothesis.chars().collect();
        let ideal_chars: Vec<char> = ideal.chars().collect();
        let hyp_spans = tok.offsets(&req.hypothesis);
        let ideal_spans = tok.offsets(&ideal);
        let word = |chars: &[char], s: crate::tokenize::CharSpan| chars[s.start..s.end].iter().collect::<String>();
        let mut raw = Vec::new();
        for (i, hs) in hyp_spans.iter().enumerate() {
            let (severity, category) = match ideal_spans.get(i) {
                Some(is) if word(&hyp_chars, *hs) == word(&ideal_chars, *is) => continue,
                Some(_) if req.scorer_id == SCORER_NATURALNESS => ("minor", "fluency/unnatural"),
                Some(_) => ("minor", "accuracy/mistranslation"),
                None => ("major", "accuracy/addition"),
            };
            raw.push(WireSpan {
                start: hs.start as i64,
                end: hs.end as i64,
                severity: severity.into(),
                category: category.into(),
            });
        }
        Ok(clamp_spans(&raw, &req.hypothesis, &req.scorer_id))
    }
}
