//! QE-filtered best-of-N distillation.
//!
//! 1. [`prefilter`]: one greedy and one sampled translation per source; keep
//!    the `k` sources where sampling improves most over greedy.
//! 2. [`best_of_n`]: sample `n` translations, keep the QE argmax.
//! 3. [`format_filter`]: reject chatty or degenerate outputs.
//! 4. [`emit_dataset`]: write the top examples per language pair as shards.
//!
//! Every decision is recorded in [`AuditRecord`]s so that [`replay_audit`]
//! can rebuild the emitted dataset without touching a backend.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, GenRequest, ScoreRequest, SCORER_METRICX_QE};
use crate::corpus::{IngestMode, LangPair, Segment, SourcePool};
use crate::error::{Error, Result};
use crate::metrics::{rescale, RescaleTransform};
use crate::prompting::{render_prompt, Registry};
use crate::rewards::Severity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeTag {
    Greedy,
    Sampled(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub segment_id: String,
    /// Verbatim backend output.
    pub text: String,
    pub decode_tag: DecodeTag,
    #[serde(default)]
    pub gen_metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub candidate: Candidate,
    pub scores: BTreeMap<String, f64>,
    pub rescaled: BTreeMap<String, f64>,
}

impl ScoredCandidate {
    pub fn new(candidate: Candidate) -> Self {
        Self {
            candidate,
            scores: BTreeMap::new(),
            rescaled: BTreeMap::new(),
        }
    }

    /// Records a raw score and its rescaled value under `scorer_id`.
    pub fn add_score(&mut self, scorer_id: &str, raw: f64, t: RescaleTransform) {
        self.scores.insert(scorer_id.to_string(), raw);
        self.rescaled.insert(scorer_id.to_string(), rescale(raw, t));
    }
}

/// A scorer together with the transform that makes it higher-is-better.
#[derive(Clone, Copy)]
pub struct QeHandle<'a> {
    pub backend: &'a dyn Backend,
    pub scorer_id: &'a str,
    pub transform: RescaleTransform,
}

impl<'a> QeHandle<'a> {
    pub fn metricx(backend: &'a dyn Backend) -> Self {
        Self {
            backend,
            scorer_id: SCORER_METRICX_QE,
            transform: RescaleTransform::MetricxQe,
        }
    }

    /// Returns `(raw, rescaled)`.
    pub fn score(&self, source: &str, hypothesis: &str) -> Result<(f64, f64)> {
        let raw = self
            .backend
            .score(&ScoreRequest::qe(source, hypothesis, self.scorer_id))?;
        Ok((raw, rescale(raw, self.transform)))
    }
}

/// What a generation call needs besides the source text.
#[derive(Clone, Copy)]
pub struct GenContext<'a> {
    pub registry: &'a Registry,
    pub lang_pair: &'a LangPair,
    pub temperature: f64,
    pub max_tokens: usize,
}

impl GenContext<'_> {
    pub fn prompt(&self, text: &str) -> Result<String> {
        let req = self
            .registry
            .request(&self.lang_pair.source, &self.lang_pair.target, text)?;
        render_prompt(&req)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefilterRecord {
    pub segment_id: String,
    pub greedy_score: Option<f64>,
    pub sampled_score: Option<f64>,
    /// `sampled_score - greedy_score`; `None` when either side failed (ranked as -inf).
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PrefilterRecord {
    pub fn delta_value(&self) -> f64 {
        self.delta.unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Debug, Clone)]
pub struct PrefilterOutcome {
    /// Selected segment ids, by delta descending then id ascending.
    pub selected: Vec<String>,
    /// One record per pool segment, ordered by segment id.
    pub records: Vec<PrefilterRecord>,
}

fn build_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))
}

fn first_text(backend: &dyn Backend, req: &GenRequest) -> Result<String> {
    let slots = backend.generate(req)?;
    match slots.into_iter().next() {
        Some(Ok(t)) => Ok(t),
        Some(Err(e)) => Err(Error::Scoring(format!("backend refused sample: {e}"))),
        None => Err(Error::Scoring("backend returned no sample".into())),
    }
}

fn prefilter_one(seg: &Segment, ctx: &GenContext<'_>, qe: &QeHandle<'_>) -> PrefilterRecord {
    let run = || -> Result<(f64, f64)> {
        let prompt = ctx.prompt(&seg.text)?;
        let greedy = first_text(qe.backend, &GenRequest::greedy(&prompt, ctx.max_tokens))?;
        let sampled = first_text(qe.backend, &GenRequest::sampled(&prompt, ctx.temperature, 1, ctx.max_tokens))?;
        let (_, g) = qe.score(&seg.text, &greedy)?;
        let (_, s) = qe.score(&seg.text, &sampled)?;
        Ok((g, s))
    };
    match run() {
        Ok((g, s)) => PrefilterRecord {
            segment_id: seg.id.clone(),
            greedy_score: Some(g),
            sampled_score: Some(s),
            delta: Some(s - g),
            error: None,
        },
        Err(e) => {
            log::warn!("prefilter: segment {} failed: {e}", seg.id);
            PrefilterRecord {
                segment_id: seg.id.clone(),
                greedy_score: None,
                sampled_score: None,
                delta: None,
                error: Some(e.to_string()),
            }
        }
    }
}

/// Picks the `k` records with the largest delta; ties go to the smaller id.
pub fn select_top_k(records: &[PrefilterRecord], k: usize) -> Vec<String> {
    let mut order: Vec<&PrefilterRecord> = records.iter().collect();
    order.sort_by(|a, b| {
        b.delta_value()
            .total_cmp(&a.delta_value())
            .then_with(|| a.segment_id.cmp(&b.segment_id))
    });
    order
        .into_iter()
        .filter(|r| r.delta.is_some())
        .take(k)
        .map(|r| r.segment_id.clone())
        .collect()
}

pub fn prefilter(
    pool: &SourcePool,
    ctx: &GenContext<'_>,
    qe: &QeHandle<'_>,
    k: usize,
    jobs: usize,
) -> Result<PrefilterOutcome> {
    if k == 0 {
        return Err(Error::Config("prefilter k must be >= 1".into()));
    }
    if pool.segments.is_empty() {
        return Err(Error::Domain("prefilter needs a non-empty pool".into()));
    }
    let mut records: Vec<PrefilterRecord> = build_pool(jobs)?.install(|| {
        pool.segments
            .par_iter()
            .map(|seg| prefilter_one(seg, ctx, qe))
            .collect()
    });
    records.sort_by(|a, b| a.segment_id.cmp(&b.segment_id));
    Ok(PrefilterOutcome {
        selected: select_top_k(&records, k),
        records,
    })
}

/// Argmax over `(index, score)` pairs; the lowest index wins ties.
pub fn select_best(scores: impl IntoIterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores {
        if s.is_nan() {
            continue;
        }
        best = match best {
            Some((bi, bs)) if bs > s || (bs == s && bi < i) => Some((bi, bs)),
            _ => Some((i, s)),
        };
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCandidate {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qe_raw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qe_rescaled: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BestOfN {
    pub segment_id: String,
    pub candidates: Vec<AuditCandidate>,
    pub selected: Option<usize>,
    pub scorer_id: String,
    pub transform: RescaleTransform,
}

impl BestOfN {
    pub fn selected_candidate(&self) -> Option<ScoredCandidate> {
        let c = &self.candidates[self.selected?];
        let mut sc = ScoredCandidate::new(Candidate {
            segment_id: self.segment_id.clone(),
            text: c.text.clone()?,
            decode_tag: DecodeTag::Sampled(c.index),
            gen_metadata: BTreeMap::new(),
        });
        sc.add_score(&self.scorer_id, c.qe_raw?, self.transform);
        Some(sc)
    }
}

/// Samples `n` translations and keeps the one with the highest rescaled QE.
///
/// Per-sample generation or scoring failures are recorded on the candidate;
/// the call only fails if the whole generation request fails.
pub fn best_of_n(segment: &Segment, n: usize, ctx: &GenContext<'_>, qe: &QeHandle<'_>) -> Result<BestOfN> {
    if n == 0 {
        return Err(Error::Config("best-of-n needs n >= 1".into()));
    }
    let prompt = ctx.prompt(&segment.text)?;
    let slots = qe
        .backend
        .generate(&GenRequest::sampled(prompt, ctx.temperature, n, ctx.max_tokens))?;
    let candidates: Vec<AuditCandidate> = slots
        .into_iter()
        .enumerate()
        .map(|(index, slot)| match slot {
            Ok(text) => match qe.score(&segment.text, &text) {
                Ok((raw, resc)) => AuditCandidate {
                    index,
                    text: Some(text),
                    error: None,
                    qe_raw: Some(raw),
                    qe_rescaled: Some(resc),
                },
                Err(e) => AuditCandidate {
                    index,
                    text: Some(text),
                    error: Some(format!("scoring failed: {e}")),
                    qe_raw: None,
                    qe_rescaled: None,
                },
            },
            Err(e) => AuditCandidate {
                index,
                text: None,
                error: Some(e),
                qe_raw: None,
                qe_rescaled: None,
            },
        })
        .collect();
    let selected = select_best(
        candidates
            .iter()
            .filter_map(|c| c.qe_rescaled.map(|s| (c.index, s))),
    );
    Ok(BestOfN {
        segment_id: segment.id.clone(),
        candidates,
        selected,
        scorer_id: qe.scorer_id.to_string(),
        transform: qe.transform,
    })
}

// ---- formatting filter ----

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Empty,
    CommentaryPrefix,
    PromptEcho,
    SourceCopy,
    Judge(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Reject(RejectReason),
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub commentary_prefixes: Vec<String>,
    /// Reject when this fraction of the prompt's tokens reappears in the output.
    pub prompt_echo_fraction: f64,
    /// Reject when more than this fraction of the output's words are copied from the source.
    pub max_source_copy_fraction: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            commentary_prefixes: [
                "Translation:",
                "Here is",
                "Here's",
                "Sure,",
                "Sure!",
                "Certainly",
                "Note:",
                "As an AI",
                "I cannot",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
            prompt_echo_fraction: 0.8,
            max_source_copy_fraction: 0.5,
        }
    }
}

#[derive(Clone, Copy)]
pub struct JudgeHandle<'a> {
    pub backend: &'a dyn Backend,
    pub scorer_id: &'a str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub verdict: Verdict,
    pub warnings: Vec<String>,
}

fn bag(text: &str, words_only: bool) -> HashMap<String, usize> {
    use crate::tokenize::{Tokenizer, WhitespacePunctTokenizer};
    let chars: Vec<char> = text.chars().collect();
    let mut out = HashMap::new();
    for s in WhitespacePunctTokenizer.offsets(text) {
        let tok: String = chars[s.start..s.end].iter().collect::<String>().to_lowercase();
        if words_only && !tok.chars().any(char::is_alphabetic) {
            continue;
        }
        *out.entry(tok).or_insert(0) += 1;
    }
    out
}

/// Fraction of `of`'s tokens (with multiplicity) that also occur in `within`.
fn covered_fraction(of: &HashMap<String, usize>, within: &HashMap<String, usize>) -> f64 {
    let total: usize = of.values().sum();
    if total == 0 {
        return 0.0;
    }
    let shared: usize = of
        .iter()
        .map(|(t, &c)| c.min(within.get(t).copied().unwrap_or(0)))
        .sum();
    shared as f64 / total as f64
}

/// Heuristic formatting checks, optionally followed by a span judge.
pub fn format_filter(
    text: &str,
    source: &str,
    prompt: &str,
    judge: Option<&JudgeHandle<'_>>,
    cfg: &FilterConfig,
) -> FilterOutcome {
    let verdict = heuristic_verdict(text, source, prompt, cfg);
    let mut warnings = Vec::new();
    if !verdict.is_pass() {
        return FilterOutcome { verdict, warnings };
    }
    let Some(judge) = judge else {
        return FilterOutcome { verdict, warnings };
    };
    match judge.backend.judge_spans(&ScoreRequest::qe(source, text, judge.scorer_id)) {
        Ok(j) => {
            warnings.extend(j.warnings);
            let bad = j.spans.iter().find(|s| {
                s.severity == Severity::NonTranslation || s.category.to_ascii_lowercase().starts_with("format")
            });
            let verdict = match bad {
                Some(s) => Verdict::Reject(RejectReason::Judge(format!(
                    "{} {} at [{}, {})",
                    s.severity, s.category, s.start, s.end
                ))),
                None => Verdict::Pass,
            };
            FilterOutcome { verdict, warnings }
        }
        Err(e) => {
            let msg = format!("format judge unavailable, using heuristic verdict: {e}");
            log::warn!("{msg}");
            warnings.push(msg);
            FilterOutcome { verdict, warnings }
        }
    }
}

fn heuristic_verdict(text: &str, source: &str, prompt: &str, cfg: &FilterConfig) -> Verdict {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Verdict::Reject(RejectReason::Empty);
    }
    let lower = trimmed.to_lowercase();
    if cfg
        .commentary_prefixes
        .iter()
        .any(|p| !p.is_empty() && lower.starts_with(&p.to_lowercase()))
    {
        return Verdict::Reject(RejectReason::CommentaryPrefix);
    }
    if !prompt.is_empty() && covered_fraction(&bag(prompt, false), &bag(text, false)) >= cfg.prompt_echo_fraction {
        return Verdict::Reject(RejectReason::PromptEcho);
    }
    if covered_fraction(&bag(text, true), &bag(source, true)) > cfg.max_source_copy_fraction {
        return Verdict::Reject(RejectReason::SourceCopy);
    }
    Verdict::Pass
}

// ---- audit log and emission ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub segment_id: String,
    pub sample_index: usize,
    pub scorer_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub source_text: String,
    pub target_text: String,
    pub lang_pair: LangPair,
    pub mode: IngestMode,
    pub qe_raw: f64,
    pub qe_rescaled: f64,
    pub provenance: Provenance,
}

/// Everything decided about one source segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub segment_id: String,
    pub lang_pair: LangPair,
    pub mode: IngestMode,
    pub source_text: String,
    pub scorer_id: String,
    pub transform: RescaleTransform,
    pub candidates: Vec<AuditCandidate>,
    pub selected: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl AuditRecord {
    /// The accepted training example, if selection succeeded and the filter passed.
    pub fn dataset_record(&self) -> Option<DatasetRecord> {
        if !self.verdict.as_ref().is_some_and(Verdict::is_pass) {
            return None;
        }
        let c = self.candidates.get(self.selected?)?;
        Some(DatasetRecord {
            source_text: self.source_text.clone(),
            target_text: c.text.clone()?,
            lang_pair: self.lang_pair.clone(),
            mode: self.mode,
            qe_raw: c.qe_raw?,
            qe_rescaled: c.qe_rescaled?,
            provenance: Provenance {
                segment_id: self.segment_id.clone(),
                sample_index: c.index,
                scorer_id: self.scorer_id.clone(),
            },
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub n: usize,
    pub cap_per_pair: usize,
    /// Prefilter survivors; defaults to twice the cap.
    pub k: Option<usize>,
    pub temperature: f64,
    pub max_tokens: usize,
    pub scorer_id: String,
    pub transform: RescaleTransform,
    pub judge_scorer_id: Option<String>,
    pub filter: FilterConfig,
    pub shard_size: usize,
    pub mode: IngestMode,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            n: 128,
            cap_per_pair: 10_000,
            k: None,
            temperature: 1.0,
            max_tokens: 1024,
            scorer_id: SCORER_METRICX_QE.into(),
            transform: RescaleTransform::MetricxQe,
            judge_scorer_id: None,
            filter: FilterConfig::default(),
            shard_size: 10_000,
            mode: IngestMode::Sentence,
        }
    }
}

impl DistillConfig {
    pub fn effective_k(&self) -> usize {
        self.k.unwrap_or(self.cap_per_pair.saturating_mul(2))
    }
}

/// Best-of-N selection plus filtering for every segment. Records come back
/// ordered by segment id regardless of completion order.
pub fn run_selection(
    segments: &[Segment],
    ctx: &GenContext<'_>,
    backend: &dyn Backend,
    cfg: &DistillConfig,
    jobs: usize,
) -> Result<Vec<AuditRecord>> {
    let qe = QeHandle {
        backend,
        scorer_id: &cfg.scorer_id,
        transform: cfg.transform,
    };
    let judge = cfg.judge_scorer_id.as_deref().map(|id| JudgeHandle {
        backend,
        scorer_id: id,
    });
    let mut records: Vec<AuditRecord> = build_pool(jobs)?.install(|| {
        segments
            .par_iter()
            .map(|seg| {
                let mut rec = AuditRecord {
                    segment_id: seg.id.clone(),
                    lang_pair: ctx.lang_pair.clone(),
                    mode: cfg.mode,
                    source_text: seg.text.clone(),
                    scorer_id: cfg.scorer_id.clone(),
                    transform: cfg.transform,
                    candidates: Vec::new(),
                    selected: None,
                    verdict: None,
                    failure: None,
                };
                match best_of_n(seg, cfg.n, ctx, &qe) {
                    Ok(b) => {
                        rec.candidates = b.candidates;
                        rec.selected = b.selected;
                    }
                    Err(e) => rec.failure = Some(e.to_string()),
                }
                match rec.selected {
                    Some(i) => {
                        let text = rec.candidates[i].text.clone().unwrap_or_default();
                        let prompt = ctx.prompt(&seg.text).unwrap_or_default();
                        let out = format_filter(&text, &seg.text, &prompt, judge.as_ref(), &cfg.filter);
                        rec.verdict = Some(out.verdict);
                    }
                    None if rec.failure.is_none() => {
                        rec.failure = Some("every sample failed".into());
                    }
                    None => {}
                }
                if let Some(f) = &rec.failure {
                    log::warn!("segment {}: {f}", seg.id);
                }
                rec
            })
            .collect()
    });
    records.sort_by(|a, b| a.segment_id.cmp(&b.segment_id));
    Ok(records)
}

/// Rebuilds accepted dataset records from an audit log, re-running selection
/// from the stored scores.
pub fn replay_audit(audit: &[AuditRecord]) -> Result<Vec<DatasetRecord>> {
    let mut out = Vec::new();
    for rec in audit {
        let reselected = select_best(
            rec.candidates
                .iter()
                .filter_map(|c| c.qe_rescaled.map(|s| (c.index, s))),
        )
        .and_then(|idx| rec.candidates.iter().position(|c| c.index == idx));
        if reselected != rec.selected {
            return Err(Error::Integrity(format!(
                "segment {}: audit says candidate {:?}, scores select {:?}",
                rec.segment_id, rec.selected, reselected
            )));
        }
        for c in &rec.candidates {
            if let (Some(raw), Some(resc)) = (c.qe_raw, c.qe_rescaled) {
                if rescale(raw, rec.transform).to_bits() != resc.to_bits() {
                    return Err(Error::Integrity(format!(
                        "segment {} candidate {}: rescaled score does not match raw",
                        rec.segment_id, c.index
                    )));
                }
            }
        }
        out.extend(rec.dataset_record());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEmission {
    pub lang_pair: LangPair,
    pub available: usize,
    pub written: usize,
    pub shortfall: usize,
    /// Relative to the output directory, so reports are location independent.
    pub shards: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmitReport {
    pub cap_per_pair: usize,
    pub pairs: Vec<PairEmission>,
}

/// Keeps the `cap` highest-QE records per pair (ties by segment id).
pub fn select_for_emission(records: Vec<DatasetRecord>, cap: usize) -> BTreeMap<LangPair, Vec<DatasetRecord>> {
    let mut by_pair: BTreeMap<LangPair, Vec<DatasetRecord>> = BTreeMap::new();
    for r in records {
        by_pair.entry(r.lang_pair.clone()).or_default().push(r);
    }
    for recs in by_pair.values_mut() {
        recs.sort_by(|a, b| {
            b.qe_rescaled
                .total_cmp(&a.qe_rescaled)
                .then_with(|| a.provenance.segment_id.cmp(&b.provenance.segment_id))
        });
        recs.truncate(cap);
        recs.sort_by(|a, b| a.provenance.segment_id.cmp(&b.provenance.segment_id));
    }
    by_pair
}

/// Writes `out_dir/<src>_<tgt>/shard-NNNNN.jsonl`. On any failure every file
/// written by this call is removed.
pub fn emit_dataset(
    records: Vec<DatasetRecord>,
    cap_per_pair: usize,
    shard_size: usize,
    out_dir: &Path,
) -> Result<EmitReport> {
    if cap_per_pair == 0 {
        return Err(Error::Config("cap_per_pair must be >= 1".into()));
    }
    let shard_size = shard_size.max(1);
    let mut available: BTreeMap<LangPair, usize> = BTreeMap::new();
    for r in &records {
        *available.entry(r.lang_pair.clone()).or_default() += 1;
    }
    let selected = select_for_emission(records, cap_per_pair);
    let mut written_files: Vec<PathBuf> = Vec::new();
    let result = (|| -> Result<Vec<PairEmission>> {
        let mut pairs = Vec::new();
        for (pair, recs) in &selected {
            let dir = out_dir.join(pair.slug());
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut shards = Vec::new();
            for (i, chunk) in recs.chunks(shard_size).enumerate() {
                let path = dir.join(format!("shard-{i:05}.jsonl"));
                let tmp = dir.join(format!(".shard-{i:05}.jsonl.tmp"));
                written_files.push(tmp.clone());
                let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
                let mut w = BufWriter::new(file);
                crate::jsonl::to_writer(&mut w, chunk)?;
                w.flush().map_err(|e| Error::io(&tmp, e))?;
                fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
                written_files.push(path.clone());
                shards.push(PathBuf::from(pair.slug()).join(format!("shard-{i:05}.jsonl")));
            }
            let avail = available[pair];
            let shortfall = cap_per_pair.saturating_sub(recs.len());
            if shortfall > 0 {
                log::info!("{pair}: {} of {cap_per_pair} examples available", recs.len());
            }
            pairs.push(PairEmission {
                lang_pair: pair.clone(),
                available: avail,
                written: recs.len(),
                shortfall,
                shards,
            });
        }
        Ok(pairs)
    })();
    match result {
        Ok(pairs) => Ok(EmitReport { cap_per_pair, pairs }),
        Err(e) => {
            for f in &written_files {
                let _ = fs::remove_file(f);
            }
            Err(e)
        }
    }
}
