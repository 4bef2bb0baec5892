//! Splits the context region into punctuation-delimited facts and maps each
//! context token to the fact that owns it.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::tokenize::TokenRecord;

pub const DELIMITERS: [char; 4] = ['.', '!', '?', '\n'];

/// Fragments with fewer content characters than this are folded into the
/// preceding fact.
const MIN_FRAGMENT_CHARS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fact {
    /// Position of the fact in context order, starting at 0.
    pub id: usize,
    /// Byte span in the prompt.
    pub bytes: Range<usize>,
    /// Prompt token indices owned by this fact.
    pub tokens: Range<usize>,
    pub text: String,
}

impl Fact {
    pub fn token_len(&self) -> usize {
        self.tokens.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactSegmentation {
    pub facts: Vec<Fact>,
    /// Prompt token range of the context.
    pub context_tokens: Range<usize>,
    /// `token_to_fact[i - context_tokens.start]` is the owning fact of
    /// prompt token `i`; `None` for whitespace-only tokens.
    pub token_to_fact: Vec<Option<usize>>,
}

impl FactSegmentation {
    pub fn fact_of(&self, token: usize) -> Option<usize> {
        if !self.context_tokens.contains(&token) {
            return None;
        }
        self.token_to_fact[token - self.context_tokens.start]
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }
}

fn content_chars(s: &str) -> usize {
    s.chars()
        .filter(|c| !c.is_whitespace() && !DELIMITERS.contains(c))
        .count()
}

/// Byte spans (relative to `text`) of the facts in `text`.
pub fn fact_spans(text: &str) -> Vec<Range<usize>> {
    let mut raw = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if DELIMITERS.contains(&c) {
            raw.push(start..i + c.len_utf8());
            start = i + c.len_utf8();
        }
    }
    if start < text.len() {
        raw.push(start..text.len());
    }

    let trimmed: Vec<Range<usize>> = raw
        .into_iter()
        .filter_map(|r| {
            let seg = &text[r.clone()];
            let lead = seg.len() - seg.trim_start().len();
            let trail = seg.len() - seg.trim_end().len();
            (lead < seg.len()).then(|| r.start + lead..r.end - trail)
        })
        .collect();

    let mut facts: Vec<Range<usize>> = Vec::with_capacity(trimmed.len());
    let mut pending: Option<usize> = None;
    let count = trimmed.len();
    for (idx, r) in trimmed.into_iter().enumerate() {
        let small = content_chars(&text[r.clone()]) < MIN_FRAGMENT_CHARS;
        if small && count > 1 {
            if let Some(prev) = facts.last_mut() {
                prev.end = r.end;
            } else if idx + 1 < count {
                pending.get_or_insert(r.start);
            } else {
                facts.push(pending.take().unwrap_or(r.start)..r.end);
            }
            continue;
        }
        let start = pending.take().unwrap_or(r.start);
        facts.push(start..r.end);
    }
    if let Some(start) = pending {
        // only leading fragments were seen
        facts.push(start..text.len());
    }
    facts
}

/// Segments `context_text`, which starts at prompt byte `base`, and assigns
/// the prompt tokens in `context_tokens` to facts by their start byte.
pub fn segment_facts(
    context_text: &str,
    base: usize,
    tokens: &[TokenRecord],
    context_tokens: Range<usize>,
) -> FactSegmentation {
    let spans: Vec<Range<usize>> = fact_spans(context_text)
        .into_iter()
        .map(|r| r.start + base..r.end + base)
        .collect();

    let owner = |tok: &TokenRecord| -> Option<usize> {
        // last fact starting at or before the token start
        let idx = spans.partition_point(|s| s.start <= tok.start);
        if idx > 0 && spans[idx - 1].contains(&tok.start) {
            return Some(idx - 1);
        }
        // token starts in dropped whitespace but reaches into the next fact
        (idx < spans.len() && spans[idx].start < tok.end).then_some(idx)
    };

    let token_to_fact: Vec<Option<usize>> =
        tokens[context_tokens.clone()].iter().map(owner).collect();

    let facts = spans
        .iter()
        .enumerate()
        .map(|(id, bytes)| {
            let mut first = None;
            let mut last = 0;
            for (off, f) in token_to_fact.iter().enumerate() {
                if *f == Some(id) {
                    first.get_or_insert(off);
                    last = off;
                }
            }
            let tokens = match first {
                Some(f) => context_tokens.start + f..context_tokens.start + last + 1,
                None => context_tokens.start..context_tokens.start,
            };
            Fact {
                id,
                bytes: bytes.clone(),
                tokens,
                text: context_text[bytes.start - base..bytes.end - base].to_string(),
            }
        })
        .collect();

    FactSegmentation {
        facts,
        context_tokens,
        token_to_fact,
    }
}
