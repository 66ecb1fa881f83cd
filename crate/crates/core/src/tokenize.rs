//! Tokenizer adapters.
//!
//! Token counts throughout the pipeline are relative to the adapter in use.
//! The default adapter splits on whitespace and isolates every punctuation
//! character as its own token, which is close enough to a subword count for
//! length bucketing and blob packing while staying dependency-free.

use serde::{Deserialize, Serialize};

/// A half-open `[start, end)` span measured in Unicode scalar values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

pub trait Tokenizer: Send + Sync {
    /// Identifier recorded in output metadata.
    fn name(&self) -> &str;

    /// Character offsets of every token, ascending and non-overlapping.
    fn offsets(&self, text: &str) -> Vec<CharSpan>;

    fn count(&self, text: &str) -> usize {
        self.offsets(text).len()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespacePunctTokenizer;

impl Tokenizer for WhitespacePunctTokenizer {
    fn name(&self) -> &str {
        "whitespace-punct"
    }

    fn offsets(&self, text: &str) -> Vec<CharSpan> {
        let mut out = Vec::new();
        let mut word_start: Option<usize> = None;
        for (i, c) in text.chars().enumerate() {
            if c.is_whitespace() {
                if let Some(s) = word_start.take() {
                    out.push(CharSpan { start: s, end: i });
                }
            } else if c.is_ascii_punctuation() || is_unicode_punct(c) {
                if let Some(s) = word_start.take() {
                    out.push(CharSpan { start: s, end: i });
                }
                out.push(CharSpan {
                    start: i,
                    end: i + 1,
                });
            } else if word_start.is_none() {
                word_start = Some(i);
            }
        }
        if let Some(s) = word_start {
            out.push(CharSpan {
                start: s,
                end: text.chars().count(),
            });
        }
        out
    }
}

fn is_unicode_punct(c: char) -> bool {
    matches!(
        c,
        '\u{2010}'..='\u{2027}' | '\u{3001}'..='\u{3003}' | '\u{300C}'..='\u{300F}' | '\u{FF01}' | '\u{FF0C}' | '\u{FF1A}' | '\u{FF1B}' | '\u{FF1F}' | '¡' | '¿' | '«' | '»'
    )
}
