//! Fact frequency, sink filtering, fact scoring and top-n selection.

use std::cmp::Ordering;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::attention::AggregatedMatrix;
use crate::config::{RetrievalConfig, TopkDomain};
use crate::segment::FactSegmentation;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RetrievalError {
    #[error("no generated tokens to aggregate over")]
    NoGeneratedTokens,
    #[error("token subset is empty")]
    EmptySubset,
    #[error("no facts to score")]
    NoSurvivors,
    #[error("fact {0} owns no tokens")]
    EmptyFact(usize),
    #[error("token subset index {t} out of range (T = {len})")]
    SubsetOutOfRange { t: usize, len: usize },
    #[error("context has no facts")]
    NoFacts,
}

/// Orders `(value, index)` pairs by value descending, then index ascending.
fn desc_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// The `k` columns of `row` within `columns` with the largest weights,
/// returned in ascending index order.
pub fn topk_attended(row: &[f64], columns: Range<usize>, k: usize) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> = columns.map(|i| (row[i], i)).collect();
    if k == 0 {
        return Vec::new();
    }
    if cand.len() > k {
        cand.select_nth_unstable_by(k - 1, desc_then_index);
        cand.truncate(k);
    }
    let mut idx: Vec<usize> = cand.into_iter().map(|(_, i)| i).collect();
    idx.sort_unstable();
    idx
}

/// Fraction of generated tokens whose top-k set touches each fact.
pub fn fact_frequency(
    seg: &FactSegmentation,
    topk_sets: &[Vec<usize>],
) -> Result<Vec<f64>, RetrievalError> {
    if topk_sets.is_empty() {
        return Err(RetrievalError::NoGeneratedTokens);
    }
    let mut hits = vec![0usize; seg.len()];
    // stamp[c] == t + 1 once fact c has been counted for token t
    let mut stamp = vec![0usize; seg.len()];
    for (t, set) in topk_sets.iter().enumerate() {
        for &i in set {
            if let Some(c) = seg.fact_of(i) {
                if stamp[c] != t + 1 {
                    stamp[c] = t + 1;
                    hits[c] += 1;
                }
            }
        }
    }
    let total = topk_sets.len() as f64;
    Ok(hits.into_iter().map(|h| h as f64 / total).collect())
}

/// Sink flags: `f(c) >= tau`.
pub fn filter_sinks(freqs: &[f64], tau: f64) -> Vec<bool> {
    freqs.iter().map(|&f| f >= tau).collect()
}

/// Mean over the fact's tokens of the mean attention from the subset's
/// generated tokens. Returns one entry per survivor, in survivor order.
pub fn score_facts(
    agg: &AggregatedMatrix,
    seg: &FactSegmentation,
    survivors: &[usize],
    subset: &[usize],
) -> Result<Vec<f64>, RetrievalError> {
    if subset.is_empty() {
        return Err(RetrievalError::EmptySubset);
    }
    if survivors.is_empty() {
        return Err(RetrievalError::NoSurvivors);
    }
    let rows = agg.num_rows();
    if let Some(&t) = subset.iter().find(|&&t| t >= rows) {
        return Err(RetrievalError::SubsetOutOfRange { t, len: rows });
    }
    let inv_subset = 1.0 / subset.len() as f64;
    survivors
        .iter()
        .map(|&c| {
            let fact = &seg.facts[c];
            let owned: Vec<usize> = fact
                .tokens
                .clone()
                .filter(|&i| seg.fact_of(i) == Some(c))
                .collect();
            if owned.is_empty() {
                return Err(RetrievalError::EmptyFact(c));
            }
            let total: f64 = owned
                .iter()
                .map(|&i| subset.iter().map(|&t| agg.values[[t, i]]).sum::<f64>() * inv_subset)
                .sum();
            Ok(total / owned.len() as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactScore {
    pub fact_id: usize,
    pub text: String,
    pub bytes: Range<usize>,
    pub tokens: Range<usize>,
    pub token_length: usize,
    pub frequency: f64,
    pub sink: bool,
    pub score: Option<f64>,
    /// 1-based position in the final selection.
    pub selected_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactScoreTable {
    pub facts: Vec<FactScore>,
    /// Every fact was a sink and ranking fell back to all facts.
    pub sink_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedFact {
    pub fact_id: usize,
    pub text: String,
    /// Byte span in the prompt; `bytes.start` orders facts by context position.
    pub bytes: Range<usize>,
    pub score: f64,
    pub frequency: f64,
}

/// Keeps scored facts with at least `min_tokens` tokens, ranks them by score
/// (earlier fact first on ties) and returns at most `max_facts`.
pub fn select_facts(
    table: &mut FactScoreTable,
    max_facts: usize,
    min_tokens: usize,
) -> Vec<RetrievedFact> {
    let mut ranked: Vec<(f64, usize)> = table
        .facts
        .iter()
        .enumerate()
        .filter_map(|(idx, f)| {
            f.score
                .filter(|_| f.token_length >= min_tokens)
                .map(|s| (s, idx))
        })
        .collect();
    ranked.sort_by(desc_then_index);
    ranked.truncate(max_facts);
    for f in &mut table.facts {
        f.selected_rank = None;
    }
    ranked
        .into_iter()
        .enumerate()
        .map(|(rank, (score, idx))| {
            let f = &mut table.facts[idx];
            f.selected_rank = Some(rank + 1);
            RetrievedFact {
                fact_id: f.fact_id,
                text: f.text.clone(),
                bytes: f.bytes.clone(),
                score,
                frequency: f.frequency,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalOutcome {
    pub table: FactScoreTable,
    pub retrieved: Vec<RetrievedFact>,
    pub topk_sets: Vec<Vec<usize>>,
}

/// Top-k, frequency, sink filtering, scoring and selection.
///
/// `scoring` is the (possibly renormalized) aggregate used for scores;
/// `raw` is the unnormalized aggregate, consulted only when top-k runs over
/// the full prompt.
pub fn retrieve(
    scoring: &AggregatedMatrix,
    raw: &AggregatedMatrix,
    seg: &FactSegmentation,
    config: &RetrievalConfig,
    subset: &[usize],
) -> Result<RetrievalOutcome, RetrievalError> {
    if seg.is_empty() {
        return Err(RetrievalError::NoFacts);
    }
    let (ranking, columns) = match config.topk_domain {
        TopkDomain::Context => (scoring, seg.context_tokens.clone()),
        TopkDomain::FullPrompt => (raw, 0..raw.num_cols()),
    };
    let topk_sets: Vec<Vec<usize>> = (0..ranking.num_rows())
        .map(|t| topk_attended(ranking.row(t), columns.clone(), config.k))
        .collect();
    let freqs = fact_frequency(seg, &topk_sets)?;
    let sinks = filter_sinks(&freqs, config.tau);

    let scorable: Vec<usize> = (0..seg.len())
        .filter(|&c| seg.facts[c].token_len() > 0)
        .collect();
    let mut survivors: Vec<usize> = scorable.iter().copied().filter(|&c| !sinks[c]).collect();
    let mut sink_fallback = false;
    if survivors.is_empty() {
        log::warn!(
            "all {} facts are attention sinks; ranking without sink filtering",
            seg.len()
        );
        survivors = scorable;
        sink_fallback = true;
    }
    let scores = score_facts(scoring, seg, &survivors, subset)?;
    let mut score_of = vec![None; seg.len()];
    for (&c, s) in survivors.iter().zip(scores) {
        score_of[c] = Some(s);
    }

    let mut table = FactScoreTable {
        facts: seg
            .facts
            .iter()
            .map(|f| FactScore {
                fact_id: f.id,
                text: f.text.clone(),
                bytes: f.bytes.clone(),
                tokens: f.tokens.clone(),
                token_length: f.token_len(),
                frequency: freqs[f.id],
                sink: sinks[f.id],
                score: score_of[f.id],
                selected_rank: None,
            })
            .collect(),
        sink_fallback,
    };
    let retrieved = select_facts(&mut table, config.max_facts, config.min_tokens);
    Ok(RetrievalOutcome {
        table,
        retrieved,
        topk_sets,
    })
}
