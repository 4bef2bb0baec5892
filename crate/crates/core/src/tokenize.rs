//! A small deterministic tokenizer used by the synthetic backend and by the
//! benchmark's length accounting.
//!
//! Real traces carry the model tokenizer's records in the trace header; this
//! tokenizer only has to be stable and byte-accurate.

use serde::{Deserialize, Serialize};

/// One token with its byte span in the source text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub id: u32,
}

pub trait Tokenizer {
    fn tokenize(&self, text: &str) -> Vec<TokenRecord>;

    fn count(&self, text: &str) -> usize {
        self.tokenize(text).len()
    }
}

/// Word-level tokenizer: runs of alphanumerics form a word, every other
/// visible character is its own token, spaces attach to the following token
/// and each newline is a token of its own.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimpleTokenizer;

impl SimpleTokenizer {
    fn token_end(text: &str, from: usize) -> usize {
        let mut chars = text[from..].char_indices().peekable();
        // leading horizontal whitespace
        let mut body_start = None;
        while let Some(&(off, c)) = chars.peek() {
            if c.is_whitespace() && c != '\n' {
                chars.next();
            } else {
                body_start = Some((off, c));
                break;
            }
        }
        let Some((off, first)) = body_start else {
            return text.len();
        };
        if first == '\n' {
            // whitespace run before a newline stands alone
            return if off == 0 {
                from + first.len_utf8()
            } else {
                from + off
            };
        }
        chars.next();
        let mut end = from + off + first.len_utf8();
        if first.is_alphanumeric() {
            for (o, c) in chars {
                if c.is_alphanumeric() {
                    end = from + o + c.len_utf8();
                } else {
                    break;
                }
            }
        }
        end
    }
}

impl Tokenizer for SimpleTokenizer {
    fn tokenize(&self, text: &str) -> Vec<TokenRecord> {
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < text.len() {
            let end = Self::token_end(text, pos);
            let piece = &text[pos..end];
            out.push(TokenRecord {
                text: piece.to_string(),
                start: pos,
                end,
                id: fnv1a32(piece.as_bytes()),
            });
            pos = end;
        }
        out
    }

    fn count(&self, text: &str) -> usize {
        let mut n = 0;
        let mut pos = 0;
        while pos < text.len() {
            pos = Self::token_end(text, pos);
            n += 1;
        }
        n
    }
}

pub(crate) fn fnv1a32(bytes: &[u8]) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for b in bytes {
        h ^= u32::from(*b);
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
