//! Monolingual source ingestion, length bucketing and pool sampling.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenize::Tokenizer;

/// Largest blob, in adapter tokens, produced by [`IngestMode::Blob`].
pub const BLOB_TOKEN_CAP: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    pub text: String,
    pub lang: String,
    pub token_count: usize,
    pub char_count: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub oversize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IngestMode {
    Sentence,
    Blob,
}

impl std::str::FromStr for IngestMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sentence" => Ok(IngestMode::Sentence),
            "blob" => Ok(IngestMode::Blob),
            other => Err(Error::Config(format!("unknown ingest mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LangPair {
    pub source: String,
    pub target: String,
}

impl LangPair {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            target: target.into(),
        }
    }

    /// Filesystem-safe form, e.g. `en-US_de-DE`.
    pub fn slug(&self) -> String {
        format!("{}_{}", self.source, self.target)
    }
}

impl fmt::Display for LangPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.source, self.target)
    }
}

/// Streaming reader yielding one [`Segment`] per record.
///
/// Malformed UTF-8 surfaces as an `Err` for that line only; iteration
/// continues with the next line.
pub struct Ingest<'t, R> {
    reader: R,
    path: PathBuf,
    lang: String,
    mode: IngestMode,
    blob_cap: usize,
    tokenizer: &'t dyn Tokenizer,
    line_no: usize,
    emitted: usize,
    pending: Vec<(String, usize)>,
    pending_tokens: usize,
    queued: Option<Segment>,
    done: bool,
}

pub fn ingest<'t>(
    path: &Path,
    lang: &str,
    mode: IngestMode,
    tokenizer: &'t dyn Tokenizer,
) -> Result<Ingest<'t, BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(Ingest::new(BufReader::new(file), path, lang, mode, tokenizer))
}

impl<'t, R: BufRead> Ingest<'t, R> {
    pub fn new(
        reader: R,
        path: impl Into<PathBuf>,
        lang: &str,
        mode: IngestMode,
        tokenizer: &'t dyn Tokenizer,
    ) -> Self {
        Self {
            reader,
            path: path.into(),
            lang: lang.to_string(),
            mode,
            blob_cap: BLOB_TOKEN_CAP,
            tokenizer,
            line_no: 0,
            emitted: 0,
            pending: Vec::new(),
            pending_tokens: 0,
            queued: None,
            done: false,
        }
    }

    pub fn with_blob_cap(mut self, cap: usize) -> Self {
        self.blob_cap = cap;
        self
    }

    fn make_segment(&mut self, text: String, token_count: usize, oversize: bool) -> Segment {
        let id = format!("{}-{:07}", self.lang, self.emitted);
        self.emitted += 1;
        Segment {
            id,
            char_count: text.chars().count(),
            text,
            lang: self.lang.clone(),
            token_count,
            oversize,
        }
    }

    fn flush_pending(&mut self) -> Option<Segment> {
        if self.pending.is_empty() {
            return None;
        }
        let lines = std::mem::take(&mut self.pending);
        let tokens = std::mem::replace(&mut self.pending_tokens, 0);
        let text = lines
            .into_iter()
            .map(|(l, _)| l)
            .collect::<Vec<_>>()
            .join("\n");
        Some(self.make_segment(text, tokens, false))
    }

    /// Next raw line: `None` at EOF, `Some(Err)` on a decode failure.
    fn next_line(&mut self) -> Option<Result<String>> {
        let mut buf = Vec::new();
        match self.reader.read_until(b'\n', &mut buf) {
            Ok(0) => None,
            Ok(_) => {
                self.line_no += 1;
                if buf.last() == Some(&b'\n') {
                    buf.pop();
                }
                if buf.last() == Some(&b'\r') {
                    buf.pop();
                }
                Some(String::from_utf8(buf).map_err(|e| Error::Record {
                    path: self.path.clone(),
                    line: self.line_no,
                    message: format!("malformed UTF-8: {e}"),
                }))
            }
            Err(e) => Some(Err(Error::io(&self.path, e))),
        }
    }
}

impl<R: BufRead> Iterator for Ingest<'_, R> {
    type Item = Result<Segment>;

    fn next(&mut self) -> Option<Self::Item> {
        if let Some(seg) = self.queued.take() {
            return Some(Ok(seg));
        }
        loop {
            if self.done {
                return None;
            }
            let line = match self.next_line() {
                None => {
                    self.done = true;
                    return self.flush_pending().map(Ok);
                }
                Some(Err(e)) => return Some(Err(e)),
                Some(Ok(line)) => line,
            };
            if line.trim().is_empty() {
                continue;
            }
            let tokens = self.tokenizer.count(&line);
            match self.mode {
                IngestMode::Sentence => return Some(Ok(self.make_segment(line, tokens, false))),
                IngestMode::Blob => {
                    if tokens > self.blob_cap {
                        let flushed = self.flush_pending();
                        let oversize = self.make_segment(line, tokens, true);
                        return Some(Ok(match flushed {
                            Some(seg) => {
                                self.queued = Some(oversize);
                                seg
                            }
                            None => oversize,
                        }));
                    }
                    if self.pending_tokens + tokens > self.blob_cap {
                        let flushed = self.flush_pending();
                        self.pending.push((line, tokens));
                        self.pending_tokens = tokens;
                        if let Some(seg) = flushed {
                            return Some(Ok(seg));
                        }
                    } else {
                        self.pending.push((line, tokens));
                        self.pending_tokens += tokens;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBucket {
    pub lower: usize,
    /// Exclusive; `None` for the final open bucket.
    pub upper: Option<usize>,
    pub members: Vec<String>,
}

impl LengthBucket {
    pub fn contains(&self, tokens: usize) -> bool {
        tokens >= self.lower && self.upper.is_none_or(|u| tokens < u)
    }
}

/// Powers of two from 1 to 512; the final bucket is `[512, inf)`.
pub fn default_boundaries() -> Vec<usize> {
    (0..=9).map(|p| 1usize << p).collect()
}

pub fn validate_boundaries(boundaries: &[usize]) -> Result<()> {
    if boundaries.is_empty() {
        return Err(Error::Config("bucket boundaries must not be empty".into()));
    }
    if boundaries[0] < 1 {
        return Err(Error::Config("first bucket boundary must be >= 1".into()));
    }
    if let Some(w) = boundaries.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "bucket boundaries must be strictly ascending ({} >= {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// Assigns each segment to the half-open interval containing its token count.
///
/// When the first boundary exceeds 1 an extra leading bucket `[1, b0)` is
/// created so that no segment is left out of the partition.
pub fn bucket_by_length<'a>(
    segments: impl IntoIterator<Item = &'a Segment>,
    boundaries: &[usize],
) -> Result<Vec<LengthBucket>> {
    validate_boundaries(boundaries)?;
    let mut lowers = Vec::with_capacity(boundaries.len() + 1);
    if boundaries[0] > 1 {
        lowers.push(1);
    }
    lowers.extend_from_slice(boundaries);
    let mut buckets: Vec<LengthBucket> = lowers
        .iter()
        .enumerate()
        .map(|(i, &lower)| LengthBucket {
            lower,
            upper: lowers.get(i + 1).copied(),
            members: Vec::new(),
        })
        .collect();
    for seg in segments {
        // token_count >= 1 is a Segment invariant, so partition_point >= 1.
        let idx = lowers
            .partition_point(|&l| l <= seg.token_count.max(1))
            .saturating_sub(1);
        buckets[idx].members.push(seg.id.clone());
    }
    Ok(buckets)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quota {
    /// Split `target_size` across buckets in proportion to their sizes.
    Proportional,
    Uniform(usize),
    PerBucket(Vec<usize>),
}

impl std::str::FromStr for Quota {
    type Err = Error;

    /// Accepts `proportional`, `uniform:N`, or a comma-separated list of per-bucket counts.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("invalid quota `{s}`"));
        if s == "proportional" {
            return Ok(Quota::Proportional);
        }
        if let Some(n) = s.strip_prefix("uniform:") {
            return n.trim().parse().map(Quota::Uniform).map_err(|_| bad());
        }
        s.split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()
            .map(Quota::PerBucket)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub bucket: usize,
    pub requested: usize,
    pub available: usize,
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourcePool {
    pub lang_pair: LangPair,
    pub segments: Vec<Segment>,
    pub seed: u64,
    pub target_size: usize,
}

/// Sidecar record written next to every pool file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolMetadata {
    pub lang_pair: LangPair,
    pub seed: u64,
    pub boundaries: Vec<usize>,
    pub quotas: Vec<usize>,
    pub shortfalls: Vec<Shortfall>,
    pub target_size: usize,
    pub tokenizer: String,
}

#[derive(Debug, Clone)]
pub struct SampledPool {
    pub pool: SourcePool,
    pub quotas: Vec<usize>,
    pub shortfalls: Vec<Shortfall>,
}

fn resolve_quotas(buckets: &[LengthBucket], quota: &Quota, target_size: usize) -> Result<Vec<usize>> {
    let sizes: Vec<usize> = buckets.iter().map(|b| b.members.len()).collect();
    match quota {
        Quota::Uniform(n) => Ok(vec![*n; buckets.len()]),
        Quota::PerBucket(v) => {
            if v.len() != buckets.len() {
                return Err(Error::Config(format!(
                    "{} per-bucket quotas given for {} buckets",
                    v.len(),
                    buckets.len()
                )));
            }
            Ok(v.clone())
        }
        Quota::Proportional => {
            let total: usize = sizes.iter().sum();
            if total == 0 {
                return Ok(vec![0; sizes.len()]);
            }
            if target_size >= total {
                return Ok(sizes);
            }
            // Largest-remainder apportionment so the quotas sum to target_size.
            let mut quotas: Vec<usize> = sizes.iter().map(|&s| s * target_size / total).collect();
            let mut rema: Vec<(usize, usize)> = sizes
                .iter()
                .enumerate()
                .map(|(i, &s)| ((s * target_size) % total, i))
                .collect();
            rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            let assigned: usize = quotas.iter().sum();
            for &(_, i) in rema.iter().take(target_size - assigned) {
                quotas[i] += 1;
            }
            Ok(quotas)
        }
    }
}

/// Derives an independent seed for a named sub-stream (e.g. a language pair).
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

fn bucket_rng(seed: u64, bucket: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(bucket as u64);
    rng
}

/// Draws without replacement from each bucket, concatenating in bucket order.
pub fn sample_pool(
    buckets: &[LengthBucket],
    segments: &[Segment],
    quota: &Quota,
    seed: u64,
    target_size: usize,
    lang_pair: LangPair,
) -> Result<SampledPool> {
    if target_size == 0 {
        return Err(Error::Config("target_size must be >= 1".into()));
    }
    let by_id: HashMap<&str, &Segment> = segments.iter().map(|s| (s.id.as_str(), s)).collect();
    let quotas = resolve_quotas(buckets, quota, target_size)?;
    let mut shortfalls = Vec::new();
    let mut drawn = Vec::new();
    for (i, (bucket, &q)) in buckets.iter().zip(&quotas).enumerate() {
        let available = bucket.members.len();
        let take = if q > available {
            log::warn!("bucket {i}: quota {q} exceeds {available} available segments");
            shortfalls.push(Shortfall {
                bucket: i,
                requested: q,
                available,
                missing: q - available,
            });
            available
        } else {
            q
        };
        let mut rng = bucket_rng(seed, i);
        for idx in rand::seq::index::sample(&mut rng, available, take).into_iter() {
            let id = &bucket.members[idx];
            let seg = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::Domain(format!("bucket member `{id}` not among segments")))?;
            drawn.push((*seg).clone());
        }
    }
    drawn.truncate(target_size);
    Ok(SampledPool {
        pool: SourcePool {
            lang_pair,
            segments: drawn,
            seed,
            target_size,
        },
        quotas,
        shortfalls,
    })
}

impl SampledPool {
    pub fn metadata(&self, boundaries: &[usize], tokenizer: &dyn Tokenizer) -> PoolMetadata {
        PoolMetadata {
            lang_pair: self.pool.lang_pair.clone(),
            seed: self.pool.seed,
            boundaries: boundaries.to_vec(),
            quotas: self.quotas.clone(),
            shortfalls: self.shortfalls.clone(),
            target_size: self.pool.target_size,
            tokenizer: tokenizer.name().to_string(),
        }
    }
}
