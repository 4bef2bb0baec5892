//! Retriever-token selection by cross-evaluation: CoT tokens whose next-token
//! distribution moves most when the context is removed from the prompt.

use ndarray::Array2;

use crate::trace::TokenDistributionPair;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SelectionError {
    #[error("vocabulary sizes differ: {0} vs {1}")]
    VocabMismatch(usize, usize),
    #[error("distribution matrices differ in shape: {long:?} vs {short:?}")]
    ShapeMismatch {
        long: (usize, usize),
        short: (usize, usize),
    },
    #[error("no CoT tokens to select from")]
    Empty,
    #[error("s must be at least 1")]
    ZeroBudget,
    #[error("row {row} of the {which} distribution sums to {sum} after exponentiation")]
    NotNormalized {
        which: &'static str,
        row: usize,
        sum: f64,
    },
}

/// `KL(p || q)` in nats for two log-probability rows over the same
/// vocabulary. Accumulates in `f64` and clamps tiny negative results to zero.
pub fn kl_divergence(p_logprobs: &[f32], q_logprobs: &[f32]) -> Result<f64, SelectionError> {
    if p_logprobs.len() != q_logprobs.len() {
        return Err(SelectionError::VocabMismatch(
            p_logprobs.len(),
            q_logprobs.len(),
        ));
    }
    let mut total = 0.0f64;
    for (&p, &q) in p_logprobs.iter().zip(q_logprobs) {
        let (p, q) = (f64::from(p), f64::from(q));
        let weight = p.exp();
        if weight == 0.0 {
            continue;
        }
        total += weight * (p - q);
    }
    Ok(total.max(0.0))
}

/// Checks that every row exponentiates to a distribution within `tol`.
pub fn check_log_distributions(
    which: &'static str,
    rows: &Array2<f32>,
    tol: f64,
) -> Result<(), SelectionError> {
    for (row, r) in rows.rows().into_iter().enumerate() {
        let sum: f64 = r.iter().map(|&v| f64::from(v).exp()).sum();
        if (sum - 1.0).abs() > tol {
            return Err(SelectionError::NotNormalized { which, row, sum });
        }
    }
    Ok(())
}

/// Per-token `KL(P_long || P_short)`.
pub fn token_divergences(pair: &TokenDistributionPair) -> Result<Vec<f64>, SelectionError> {
    let (long, short) = (pair.long_logprobs.dim(), pair.short_logprobs.dim());
    if long.1 != short.1 {
        return Err(SelectionError::VocabMismatch(long.1, short.1));
    }
    if long != short {
        return Err(SelectionError::ShapeMismatch { long, short });
    }
    pair.long_logprobs
        .rows()
        .into_iter()
        .zip(pair.short_logprobs.rows())
        .map(|(p, q)| {
            let p = p.to_vec();
            let q = q.to_vec();
            kl_divergence(&p, &q)
        })
        .collect()
}

/// Indices of the `s` largest scores, earlier index first on ties, returned
/// in ascending order.
pub fn top_s(scores: &[f64], s: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(s);
    order.sort_unstable();
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrieverTokens {
    pub divergences: Vec<f64>,
    pub selected: Vec<usize>,
}

/// Selects the `s` CoT positions with the largest long/short divergence.
pub fn select_retriever_tokens(
    pair: &TokenDistributionPair,
    s: usize,
) -> Result<RetrieverTokens, SelectionError> {
    if s == 0 {
        return Err(SelectionError::ZeroBudget);
    }
    let divergences = token_divergences(pair)?;
    if divergences.is_empty() {
        return Err(SelectionError::Empty);
    }
    let selected = top_s(&divergences, s);
    Ok(RetrieverTokens {
        divergences,
        selected,
    })
}

/// A row reduced to its most probable entries plus one tail bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedRow {
    pub ids: Vec<u32>,
    pub logprobs: Vec<f32>,
    /// Log of the probability mass outside `ids`.
    pub tail_logprob: f32,
}

/// Keeps the smallest prefix of the row, by descending probability, whose
/// mass reaches `top_p`.
pub fn truncate_row(logprobs: &[f32], top_p: f64) -> TruncatedRow {
    let mut order: Vec<usize> = (0..logprobs.len()).collect();
    order.sort_by(|&a, &b| logprobs[b].total_cmp(&logprobs[a]).then(a.cmp(&b)));
    let mut mass = 0.0f64;
    let mut ids = Vec::new();
    let mut kept = Vec::new();
    for i in order {
        if mass >= top_p {
            break;
        }
        mass += f64::from(logprobs[i]).exp();
        ids.push(i as u32);
        kept.push(logprobs[i]);
    }
    TruncatedRow {
        ids,
        logprobs: kept,
        tail_logprob: (1.0 - mass).max(0.0).ln() as f32,
    }
}

/// Approximate `KL(p || q)` where `p` is truncated and `q` is bucketed onto
/// the same support. The tail of each side is treated as a single outcome.
pub fn kl_truncated(p: &TruncatedRow, q_full: &[f32]) -> f64 {
    let mut total = 0.0f64;
    let mut q_kept = 0.0f64;
    for (&id, &lp) in p.ids.iter().zip(&p.logprobs) {
        let lq = f64::from(q_full[id as usize]);
        q_kept += lq.exp();
        let w = f64::from(lp).exp();
        if w > 0.0 {
            total += w * (f64::from(lp) - lq);
        }
    }
    let p_tail = f64::from(p.tail_logprob).exp();
    if p_tail > 0.0 {
        let q_tail = (1.0 - q_kept).max(f64::MIN_POSITIVE);
        total += p_tail * (f64::from(p.tail_logprob) - q_tail.ln());
    }
    total.max(0.0)
}
