//! Haystack embedding: statements inserted at random sentence boundaries of
//! filler text sized to a token target.

use std::path::Path;

use attrieval_core::segment::fact_spans;
use attrieval_core::{SimpleTokenizer, Tokenizer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::instance::DeductionInstance;
use crate::DeductionError;

const BUNDLED: &str = include_str!("../data/filler.txt");

/// Filler sentences with their token counts.
#[derive(Debug, Clone)]
pub struct Filler {
    sentences: Vec<String>,
    token_counts: Vec<usize>,
}

impl Filler {
    pub fn from_text(text: &str) -> Result<Self, DeductionError> {
        let sentences: Vec<String> = fact_spans(text)
            .into_iter()
            .map(|r| text[r].to_string())
            .collect();
        if sentences.is_empty() {
            return Err(DeductionError::EmptyFiller);
        }
        let token_counts = sentences.iter().map(|s| SimpleTokenizer.count(s)).collect();
        Ok(Self {
            sentences,
            token_counts,
        })
    }

    /// The original essay text shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_text(BUNDLED).expect("bundled filler is non-empty")
    }

    pub fn load(path: &Path) -> Result<Self, DeductionError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    /// Cyclic run of sentences from `start` totalling at most `budget`
    /// tokens; sentences too long for the remainder are skipped.
    fn take(&self, start: usize, budget: usize) -> Vec<&str> {
        let n = self.sentences.len();
        let mut out = Vec::new();
        let mut remaining = budget;
        let mut idx = start;
        let mut misses = 0;
        while remaining > 0 && misses < n {
            let c = self.token_counts[idx % n];
            if c <= remaining {
                out.push(self.sentences[idx % n].as_str());
                remaining -= c;
                misses = 0;
            } else {
                misses += 1;
            }
            idx += 1;
        }
        out
    }
}

/// Rebuilds the context with statement `j` placed before filler sentence
/// `slots[j]` (or after all filler when `slots[j] == filler.len()`), pieces
/// joined by single spaces, and records the statement spans.
pub(crate) fn place_statements(inst: &mut DeductionInstance, filler: &[&str], slots: &[usize]) {
    let mut order: Vec<usize> = (0..inst.statements.len()).collect();
    let slot = |j: usize| slots.get(j).copied().unwrap_or(0);
    order.sort_by_key(|&j| (slot(j), j));

    let mut context = String::new();
    let push = |piece: &str, context: &mut String| {
        if !context.is_empty() {
            context.push(' ');
        }
        let start = context.len();
        context.push_str(piece);
        start..context.len()
    };
    let mut placed = Vec::with_capacity(order.len());
    let mut next = order.iter().peekable();
    for b in 0..=filler.len() {
        while let Some(&&j) = next.peek() {
            if slot(j) != b {
                break;
            }
            let mut s = inst.statements[j].clone();
            s.span = push(&s.text, &mut context);
            placed.push(s);
            next.next();
        }
        if let Some(f) = filler.get(b) {
            push(f, &mut context);
        }
    }
    inst.statements = placed;
    inst.context_tokens = SimpleTokenizer.count(&context);
    inst.context = context;
}

/// Embeds the statements into filler sized so that the whole context holds
/// `target_tokens` tokens. A target of 0 keeps the statements alone.
pub fn embed_in_haystack(
    inst: &mut DeductionInstance,
    filler: &Filler,
    target_tokens: usize,
    seed: u64,
) -> Result<(), DeductionError> {
    inst.target_tokens = target_tokens;
    if target_tokens == 0 {
        place_statements(inst, &[], &[]);
        return Ok(());
    }
    let fact_tokens: usize = inst
        .statements
        .iter()
        .map(|s| SimpleTokenizer.count(&s.text))
        .sum();
    if target_tokens < fact_tokens {
        return Err(DeductionError::TargetTooShort {
            target: target_tokens,
            needed: fact_tokens,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.random_range(0..filler.sentences.len() as u64) as usize;
    let chosen = filler.take(start, target_tokens - fact_tokens);
    let slots: Vec<usize> = (0..inst.statements.len())
        .map(|_| rng.random_range(0..=chosen.len() as u64) as usize)
        .collect();
    place_statements(inst, &chosen, &slots);
    Ok(())
}
