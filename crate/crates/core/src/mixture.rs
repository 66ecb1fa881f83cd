//! Token-proportional training mixtures.
//!
//! Sources are interleaved by deficit round-robin: at every step the source
//! furthest below its target share (in tokens) contributes its next example.
//! A source that runs out is resampled with replacement from a seeded RNG.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tokenize::Tokenizer;

pub const DEFAULT_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureEntry {
    pub name: String,
    pub fraction: f64,
    /// Paths or glob patterns of JSON-lines shards, relative to the spec file.
    #[serde(default)]
    pub shards: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    #[default]
    ModelTokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub entries: Vec<MixtureEntry>,
    #[serde(default)]
    pub measure: Measure,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Config("mixture spec has no entries".into()));
        }
        for e in &self.entries {
            if !(0.0..=1.0).contains(&e.fraction) {
                return Err(Error::Config(format!(
                    "mixture entry `{}`: fraction {} outside [0, 1]",
                    e.name, e.fraction
                )));
            }
        }
        let sum: f64 = self.entries.iter().map(|e| e.fraction).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mixture fractions sum to {sum}, expected 1")));
        }
        let mut names: Vec<&str> = self.entries.iter().map(|e| e.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("duplicate mixture source `{}`", w[0])));
        }
        Ok(())
    }
}

/// An example with its precomputed token count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceExample {
    pub record: Value,
    pub tokens: usize,
}

/// Token count of a record: its `token_count` field if present, otherwise
/// the tokenizer count summed over every string value.
pub fn count_tokens(record: &Value, tokenizer: &dyn Tokenizer) -> usize {
    if let Some(n) = record.get("token_count").and_then(Value::as_u64) {
        return n as usize;
    }
    fn walk(v: &Value, t: &dyn Tokenizer) -> usize {
        match v {
            Value::String(s) => t.count(s),
            Value::Array(a) => a.iter().map(|x| walk(x, t)).sum(),
            Value::Object(o) => o.values().map(|x| walk(x, t)).sum(),
            _ => 0,
        }
    }
    walk(record, tokenizer)
}

fn expand(base: &Path, pattern: &str) -> Result<Vec<PathBuf>> {
    let full = base.join(pattern);
    let pat = full.to_string_lossy();
    let mut paths: Vec<PathBuf> = glob::glob(&pat)
        .map_err(|e| Error::Config(format!("bad shard pattern `{pattern}`: {e}")))?
        .filter_map(|p| p.ok())
        .collect();
    if paths.is_empty() {
        return Err(Error::io(
            full,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no shard matches"),
        ));
    }
    paths.sort();
    Ok(paths)
}

/// Reads every shard of every entry. Fails before anything is emitted if a
/// shard is missing or malformed.
pub fn load_sources(spec: &MixtureSpec, base: &Path, tokenizer: &dyn Tokenizer) -> Result<Vec<Vec<SourceExample>>> {
    spec.entries
        .iter()
        .map(|e| {
            let mut out = Vec::new();
            for pattern in &e.shards {
                for path in expand(base, pattern)? {
                    for record in crate::jsonl::read::<Value>(&path)? {
                        let tokens = count_tokens(&record, tokenizer);
                        out.push(SourceExample { record, tokens });
                    }
                }
            }
            Ok(out)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedExample {
    pub source_name: String,
    pub token_count: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub resampled: bool,
    pub record: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceReport {
    pub name: String,
    pub target_fraction: f64,
    pub tokens: usize,
    pub examples: usize,
    pub resampled: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MixReport {
    pub total_tokens: usize,
    pub sources: Vec<SourceReport>,
}

impl MixReport {
    /// Largest `|realized - target|` over all sources.
    pub fn max_deviation(&self) -> f64 {
        self.sources
            .iter()
            .map(|s| (s.fraction - s.target_fraction).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct MixOutput {
    pub stream: Vec<MixedExample>,
    pub report: MixReport,
    pub warnings: Vec<String>,
}

fn build_report(spec: &MixtureSpec, stream: &[MixedExample]) -> Result<MixReport> {
    let mut sources: Vec<SourceReport> = spec
        .entries
        .iter()
        .map(|e| SourceReport {
            name: e.name.clone(),
            target_fraction: e.fraction,
            tokens: 0,
            examples: 0,
            resampled: 0,
            fraction: 0.0,
        })
        .collect();
    for ex in stream {
        let s = sources
            .iter_mut()
            .find(|s| s.name == ex.source_name)
            .ok_or_else(|| Error::Integrity(format!("example from unknown source `{}`", ex.source_name)))?;
        s.tokens += ex.token_count;
        s.examples += 1;
        s.resampled += usize::from(ex.resampled);
    }
    let total: usize = sources.iter().map(|s| s.tokens).sum();
    if total > 0 {
        for s in &mut sources {
            s.fraction = s.tokens as f64 / total as f64;
        }
    }
    Ok(MixReport {
        total_tokens: total,
        sources,
    })
}

/// Interleaves `sources` (aligned with `spec.entries`) until at least
/// `total_tokens` tokens have been emitted.
pub fn compose(spec: &MixtureSpec, sources: &[Vec<SourceExample>], total_tokens: usize) -> Result<MixOutput> {
    spec.validate()?;
    if sources.len() != spec.entries.len() {
        return Err(Error::Config(format!(
            "{} example lists for {} mixture entries",
            sources.len(),
            spec.entries.len()
        )));
    }
    for (e, ex) in spec.entries.iter().zip(sources) {
        if e.fraction > 0.0 && ex.iter().all(|x| x.tokens == 0) {
            return Err(Error::Config(format!("mixture source `{}` has no tokens", e.name)));
        }
    }
    let n = spec.entries.len();
    let mut cursor = vec![0usize; n];
    let mut emitted = vec![0usize; n];
    let mut rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(spec.seed);
            r.set_stream(i as u64);
            r
        })
        .collect();
    let mut warned = vec![false; n];
    let mut warnings = Vec::new();
    let mut stream = Vec::new();
    let mut total = 0usize;

    while total < total_tokens {
        let pick = (0..n)
            .filter(|&i| spec.entries[i].fraction > 0.0)
            .max_by(|&a, &b| {
                let da = spec.entries[a].fraction * total as f64 - emitted[a] as f64;
                let db = spec.entries[b].fraction * total as f64 - emitted[b] as f64;
                da.total_cmp(&db)
                    .then(spec.entries[a].fraction.total_cmp(&spec.entries[b].fraction))
                    .then(b.cmp(&a))
            })
            .expect("validated spec has a positive fraction");
        let pool = &sources[pick];
        let (idx, resampled) = if cursor[pick] < pool.len() {
            cursor[pick] += 1;
            (cursor[pick] - 1, false)
        } else {
            if !warned[pick] {
                let msg = format!(
                    "source `{}` exhausted after {} examples; resampling with replacement",
                    spec.entries[pick].name,
                    pool.len()
                );
                log::warn!("{msg}");
                warnings.push(msg);
                warned[pick] = true;
            }
            (rngs[pick].gen_range(0..pool.len()), true)
        };
        let ex = &pool[idx];
        emitted[pick] += ex.tokens;
        total += ex.tokens;
        stream.push(MixedExample {
            source_name: spec.entries[pick].name.clone(),
            token_count: ex.tokens,
            resampled,
            record: ex.record.clone(),
        });
    }
    let report = build_report(spec, &stream)?;
    let dev = report.max_deviation();
    if dev > spec.tolerance {
        let msg = format!("realized mixture deviates from target by {dev:.4} (tolerance {})", spec.tolerance);
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(MixOutput {
        stream,
        report,
        warnings,
    })
}

/// Recounts a composed stream and checks it against the report `compose` produced.
pub fn audit(
    spec: &MixtureSpec,
    stream: &[MixedExample],
    claimed: &MixReport,
    tokenizer: &dyn Tokenizer,
) -> Result<MixReport> {
    if spec.entries.is_empty() && stream.is_empty() {
        return Ok(MixReport::default());
    }
    for (i, ex) in stream.iter().enumerate() {
        let recount = count_tokens(&ex.record, tokenizer);
        if recount != ex.token_count {
            return Err(Error::Integrity(format!(
                "example {i} claims {} tokens, recount gives {recount}",
                ex.token_count
            )));
        }
    }
    let report = build_report(spec, stream)?;
    if report.total_tokens != claimed.total_tokens {
        return Err(Error::Integrity(format!(
            "stream has {} tokens, report claims {}",
            report.total_tokens, claimed.total_tokens
        )));
    }
    for (got, want) in report.sources.iter().zip(&claimed.sources) {
        if got.name != want.name || got.tokens != want.tokens || got.examples != want.examples {
            return Err(Error::Integrity(format!(
                "source `{}`: stream has {} examples / {} tokens, report claims {} / {}",
                got.name, got.examples, got.tokens, want.examples, want.tokens
            )));
        }
    }
    if report.sources.len() != claimed.sources.len() {
        return Err(Error::Integrity("report lists a different set of sources".into()));
    }
    Ok(report)
}
