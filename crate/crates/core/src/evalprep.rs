//! Human evaluation preparation and MQM result tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{mqm_score, MqmWeightTable};
use crate::rewards::SpanAnnotation;

/// Rater-fatigue cap on source sentences per evaluated unit.
pub const MAX_CHUNK_SENTENCES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Literary,
    News,
    Social,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDocument {
    pub doc_id: String,
    pub domain: Domain,
    /// Paragraphs, each a list of pre-split sentences.
    pub paragraphs: Vec<Vec<String>>,
}

impl EvalDocument {
    pub fn validate(&self) -> Result<()> {
        if self.paragraphs.is_empty() || self.paragraphs.iter().any(Vec::is_empty) {
            return Err(Error::Domain(format!(
                "document {} needs at least one paragraph, each with a sentence",
                self.doc_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub chunk_index: usize,
    /// Index of the first paragraph in the source document.
    pub first_paragraph: usize,
    pub paragraphs: Vec<Vec<String>>,
    pub sentence_count: usize,
}

impl Chunk {
    pub fn id(&self) -> String {
        format!("{}#{}", self.doc_id, self.chunk_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub doc_id: String,
    /// Set when a single paragraph was skipped rather than the whole document.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paragraph: Option<usize>,
    pub sentences: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Chunking {
    pub chunks: Vec<Chunk>,
    pub skips: Vec<SkipRecord>,
}

/// Splits a document into evaluation chunks of at most twelve sentences.
///
/// Non-literary documents keep only their longest fitting prefix of whole
/// paragraphs. Literary documents are packed greedily into as many chunks as
/// needed; any single paragraph over the cap is skipped.
pub fn chunk_document(doc: &EvalDocument) -> Result<Chunking> {
    doc.validate()?;
    let mut out = Chunking::default();
    let sizes: Vec<usize> = doc.paragraphs.iter().map(Vec::len).collect();
    match doc.domain {
        Domain::News | Domain::Social => {
            if sizes[0] > MAX_CHUNK_SENTENCES {
                out.skips.push(SkipRecord {
                    doc_id: doc.doc_id.clone(),
                    paragraph: None,
                    sentences: sizes[0],
                    reason: format!("first paragraph has more than {MAX_CHUNK_SENTENCES} sentences"),
                });
                return Ok(out);
            }
            let mut total = 0;
            let mut end = 0;
            while end < sizes.len() && total + sizes[end] <= MAX_CHUNK_SENTENCES {
                total += sizes[end];
                end += 1;
            }
            out.chunks.push(Chunk {
                doc_id: doc.doc_id.clone(),
                chunk_index: 0,
                first_paragraph: 0,
                paragraphs: doc.paragraphs[..end].to_vec(),
                sentence_count: total,
            });
        }
        Domain::Literary => {
            let mut start = 0;
            let mut total = 0;
            let flush = |out: &mut Chunking, start: usize, end: usize, total: usize| {
                if end > start {
                    out.chunks.push(Chunk {
                        doc_id: doc.doc_id.clone(),
                        chunk_index: out.chunks.len(),
                        first_paragraph: start,
                        paragraphs: doc.paragraphs[start..end].to_vec(),
                        sentence_count: total,
                    });
                }
            };
            for (i, &n) in sizes.iter().enumerate() {
                if n > MAX_CHUNK_SENTENCES {
                    flush(&mut out, start, i, total);
                    log::warn!("{}: paragraph {i} has {n} sentences, skipped", doc.doc_id);
                    out.skips.push(SkipRecord {
                        doc_id: doc.doc_id.clone(),
                        paragraph: Some(i),
                        sentences: n,
                        reason: format!("paragraph has more than {MAX_CHUNK_SENTENCES} sentences"),
                    });
                    start = i + 1;
                    total = 0;
                } else if total + n > MAX_CHUNK_SENTENCES {
                    flush(&mut out, start, i, total);
                    start = i;
                    total = n;
                } else {
                    total += n;
                }
            }
            flush(&mut out, start, sizes.len(), total);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRow {
    pub chunk_id: String,
    pub rater_id: String,
    /// Every system's output for this chunk goes to `rater_id`.
    pub systems: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub rows: Vec<AssignmentRow>,
}

impl Assignment {
    pub fn rater_of(&self, chunk_id: &str) -> Option<&str> {
        self.rows
            .iter()
            .find(|r| r.chunk_id == chunk_id)
            .map(|r| r.rater_id.as_str())
    }

    pub fn loads(&self) -> BTreeMap<&str, usize> {
        let mut m = BTreeMap::new();
        for r in &self.rows {
            *m.entry(r.rater_id.as_str()).or_insert(0) += 1;
        }
        m
    }
}

/// Pseudo side-by-side assignment: one rater per chunk covering all systems,
/// with chunk counts per rater differing by at most one.
pub fn assign_raters(chunks: &[Chunk], systems: &[String], raters: &[String], seed: u64) -> Result<Assignment> {
    if raters.is_empty() {
        return Err(Error::Config("at least one rater is required".into()));
    }
    let mut ids: Vec<String> = chunks.iter().map(Chunk::id).collect();
    ids.sort();
    let mut order = ids.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let rater_of: BTreeMap<String, String> = order
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id, raters[i % raters.len()].clone()))
        .collect();
    Ok(Assignment {
        rows: ids
            .into_iter()
            .map(|chunk_id| AssignmentRow {
                rater_id: rater_of[&chunk_id].clone(),
                chunk_id,
                systems: systems.to_vec(),
            })
            .collect(),
    })
}

// ---- aggregation ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestChunk {
    pub chunk_id: String,
    pub lang_pair: String,
    /// Number of evaluated segments (sentences) in the chunk.
    pub segments: usize,
}

/// What was sent for rating; annotations are checked against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalManifest {
    pub systems: Vec<String>,
    pub chunks: Vec<ManifestChunk>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub chunk_id: String,
    pub system: String,
    pub segment_index: usize,
    #[serde(default)]
    pub spans: Vec<SpanAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub chunk_id: String,
    pub system: String,
    pub segment_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub lang_pair: String,
    /// Mean segment MQM per system, in `systems` order.
    pub scores: Vec<f64>,
    /// Systems achieving the row minimum.
    pub best: Vec<String>,
}

impl ReportRow {
    pub fn best_score(&self) -> f64 {
        self.scores.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MqmReport {
    pub systems: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub exclusions: Vec<Exclusion>,
}

/// Marks every position holding the row minimum.
pub fn mark_row_minimum(scores: &[f64]) -> Vec<bool> {
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    scores.iter().map(|&s| s == min).collect()
}

/// Mean segment MQM per (language pair, system).
///
/// The denominator is every manifest segment of the pair; segments without
/// annotations count as error-free.
pub fn aggregate(annotations: &[AnnotationRecord], manifest: &EvalManifest, weights: &MqmWeightTable) -> MqmReport {
    let chunks: BTreeMap<&str, &ManifestChunk> = manifest.chunks.iter().map(|c| (c.chunk_id.as_str(), c)).collect();
    let systems: BTreeSet<&str> = manifest.systems.iter().map(String::as_str).collect();
    let mut exclusions = Vec::new();
    let exclude = |a: &AnnotationRecord, reason: String| Exclusion {
        chunk_id: a.chunk_id.clone(),
        system: a.system.clone(),
        segment_index: a.segment_index,
        reason,
    };

    // (chunk, system, segment) -> spans, merged across records.
    let mut per_segment: BTreeMap<(&str, &str, usize), Vec<SpanAnnotation>> = BTreeMap::new();
    for a in annotations {
        let Some(chunk) = chunks.get(a.chunk_id.as_str()) else {
            exclusions.push(exclude(a, "unknown chunk".into()));
            continue;
        };
        if !systems.contains(a.system.as_str()) {
            exclusions.push(exclude(a, "unknown system".into()));
            continue;
        }
        if a.segment_index >= chunk.segments {
            exclusions.push(exclude(a, format!("segment index beyond {} segments", chunk.segments)));
            continue;
        }
        per_segment
            .entry((chunk.chunk_id.as_str(), a.system.as_str(), a.segment_index))
            .or_default()
            .extend(a.spans.iter().cloned());
    }

    let mut totals: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for ((chunk_id, system, seg), spans) in &mut per_segment {
        spans.sort_by_key(|a| (a.start, a.end));
        match mqm_score(spans, weights) {
            Ok(s) => *totals.entry((chunks[chunk_id].lang_pair.as_str(), system)).or_insert(0.0) += s,
            Err(e) => exclusions.push(Exclusion {
                chunk_id: chunk_id.to_string(),
                system: system.to_string(),
                segment_index: *seg,
                reason: e.to_string(),
            }),
        }
    }

    let mut seg_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &manifest.chunks {
        *seg_counts.entry(c.lang_pair.as_str()).or_insert(0) += c.segments;
    }
    let mut rows: Vec<ReportRow> = seg_counts
        .iter()
        .map(|(&pair, &n)| {
            let scores: Vec<f64> = manifest
                .systems
                .iter()
                .map(|s| {
                    let total = totals.get(&(pair, s.as_str())).copied().unwrap_or(0.0);
                    if n == 0 {
                        0.0
                    } else {
                        total / n as f64
                    }
                })
                .collect();
            let best = mark_row_minimum(&scores)
                .into_iter()
                .zip(&manifest.systems)
                .filter(|(m, _)| *m)
                .map(|(_, s)| s.clone())
                .collect();
            ReportRow {
                lang_pair: pair.to_string(),
                scores,
                best,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        a.best_score()
            .total_cmp(&b.best_score())
            .then_with(|| a.lang_pair.cmp(&b.lang_pair))
    });
    exclusions.sort_by(|a, b| {
        (&a.chunk_id, &a.system, a.segment_index, &a.reason).cmp(&(&b.chunk_id, &b.system, b.segment_index, &b.reason))
    });
    MqmReport {
        systems: manifest.systems.clone(),
        rows,
        exclusions,
    }
}

impl MqmReport {
    /// Plain-text table; the best cell of each row carries a `*`.
    pub fn render_text(&self) -> String {
        let mut header = vec!["Language pair".to_string()];
        header.extend(self.systems.iter().cloned());
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let marks = mark_row_minimum(&r.scores);
                std::iter::once(r.lang_pair.clone())
                    .chain(
                        r.scores
                            .iter()
                            .zip(marks)
                            .map(|(s, m)| format!("{s:.3}{}", if m { "*" } else { " " })),
                    )
                    .collect()
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|c| {
                std::iter::once(&header)
                    .chain(&body)
                    .map(|row| row[c].chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |row: &[String]| -> String {
            row.iter()
                .enumerate()
                .map(|(c, cell)| {
                    if c == 0 {
                        format!("{cell:<w$}", w = widths[c])
                    } else {
                        format!("{cell:>w$}", w = widths[c])
                    }
                })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = String::new();
        let _ = writeln!(out, "{}", line(&header));
        let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        for row in &body {
            let _ = writeln!(out, "{}", line(row));
        }
        out.push_str("\nMQM, lower is better; * marks the best system per row.\n");
        if !self.exclusions.is_empty() {
            let _ = writeln!(out, "\nExcluded annotations ({}):", self.exclusions.len());
            for e in &self.exclusions {
                let _ = writeln!(out, "  {} / {} / segment {}: {}", e.chunk_id, e.system, e.segment_index, e.reason);
            }
        }
        out
    }
}
