//! Numeric operations over captured attention: layer aggregation, context
//! renormalization and per-statement diagnostics.
//!
//! Storage is `f32`; every accumulation here runs in `f64`.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::trace::{AttentionTrace, TraceMode};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AttentionError {
    #[error("layer selection resolved to an empty set")]
    EmptyLayerSet,
    #[error("layer {0} is not present in the trace")]
    MissingLayer(usize),
    #[error("layer {0} is not stored per-layer in this trace")]
    NotPerLayer(usize),
    #[error("requested layers {requested:?} differ from the pre-aggregated set {recorded:?}")]
    PreAggregatedMismatch {
        requested: Vec<usize>,
        recorded: Vec<usize>,
    },
    #[error("attention matrix {index} has shape {got:?}, expected {expected:?}")]
    DimensionMismatch {
        index: usize,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("row {0} has no attention mass inside the context span")]
    ZeroContextMass(usize),
    #[error("empty token span")]
    EmptySpan,
    #[error("span {start}..{end} exceeds {n} input tokens")]
    SpanOutOfRange { start: usize, end: usize, n: usize },
    #[error("generated token {t} out of range (T = {len})")]
    RowOutOfRange { t: usize, len: usize },
    #[error("invalid layer selection '{0}'")]
    BadLayerSpec(String),
}

/// Which layers contribute to the aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerSet {
    All,
    Explicit(Vec<usize>),
    /// The topmost `ceil(q * L)` layers.
    LastFraction(f64),
}

impl Default for LayerSet {
    fn default() -> Self {
        LayerSet::LastFraction(0.25)
    }
}

impl LayerSet {
    /// Resolves against the layers present in a trace. `model_layers` is the
    /// model's total depth when known; otherwise the present count is used.
    pub fn resolve(
        &self,
        present: &[usize],
        model_layers: Option<usize>,
    ) -> Result<Vec<usize>, AttentionError> {
        let resolved = match self {
            LayerSet::All => present.to_vec(),
            LayerSet::Explicit(list) => {
                let mut list = list.clone();
                list.sort_unstable();
                list.dedup();
                if let Some(&missing) = list.iter().find(|l| !present.contains(l)) {
                    return Err(AttentionError::MissingLayer(missing));
                }
                list
            }
            LayerSet::LastFraction(q) => {
                let total = model_layers.unwrap_or(present.len());
                if !(q.is_finite() && *q > 0.0) || total == 0 {
                    return Err(AttentionError::EmptyLayerSet);
                }
                let want = ((q * total as f64).ceil() as usize).min(total);
                match model_layers {
                    Some(total) => {
                        let wanted: Vec<usize> = (total - want..total).collect();
                        if let Some(&missing) = wanted.iter().find(|l| !present.contains(l)) {
                            return Err(AttentionError::MissingLayer(missing));
                        }
                        wanted
                    }
                    None => {
                        let mut sorted = present.to_vec();
                        sorted.sort_unstable();
                        sorted[sorted.len() - want.min(sorted.len())..].to_vec()
                    }
                }
            }
        };
        if resolved.is_empty() {
            return Err(AttentionError::EmptyLayerSet);
        }
        Ok(resolved)
    }
}

impl fmt::Display for LayerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSet::All => write!(f, "all"),
            LayerSet::LastFraction(q) if *q == 0.25 => write!(f, "last-quarter"),
            LayerSet::LastFraction(q) => write!(f, "last:{q}"),
            LayerSet::Explicit(list) => {
                let parts: Vec<String> = list.iter().map(|l| l.to_string()).collect();
                write!(f, "{}", parts.join(","))
            }
        }
    }
}

/// Accepts `all`, `last-quarter`, `last:<fraction>` or a comma list of ids.
impl FromStr for LayerSet {
    type Err = AttentionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || AttentionError::BadLayerSpec(s.to_string());
        match s {
            "all" => Ok(LayerSet::All),
            "last-quarter" => Ok(LayerSet::LastFraction(0.25)),
            _ => {
                if let Some(q) = s.strip_prefix("last:") {
                    let q: f64 = q.parse().map_err(|_| bad())?;
                    if !(q > 0.0 && q <= 1.0) {
                        return Err(bad());
                    }
                    Ok(LayerSet::LastFraction(q))
                } else {
                    let list = s
                        .split(',')
                        .map(|p| p.trim().parse::<usize>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|_| bad())?;
                    Ok(LayerSet::Explicit(list))
                }
            }
        }
    }
}

/// Layer-averaged attention `T x N`, optionally renormalized over the context.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedMatrix {
    pub values: Array2<f64>,
    pub normalized: bool,
    /// Rows that had no mass inside the context and were replaced by the
    /// uniform in-span distribution.
    pub degenerate_rows: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegenerateRowPolicy {
    #[default]
    Uniform,
    Error,
}

impl AggregatedMatrix {
    pub fn num_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let cols = self.values.ncols();
        &self.values.as_slice().expect("standard layout")[t * cols..(t + 1) * cols]
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.mapv(|v| v * factor),
            ..self.clone()
        }
    }
}

/// Averages the stored head-averaged matrices over the selected layers.
pub fn aggregate_attention(
    trace: &AttentionTrace,
    layers: &LayerSet,
    model_layers: Option<usize>,
) -> Result<AggregatedMatrix, AttentionError> {
    let expected = (trace.num_generated_tokens, trace.num_input_tokens);
    for (index, m) in trace.matrices.iter().enumerate() {
        if m.dim() != expected {
            return Err(AttentionError::DimensionMismatch {
                index,
                got: m.dim(),
                expected,
            });
        }
    }
    match trace.mode {
        TraceMode::PreAggregated => {
            let accept = match layers {
                LayerSet::All => true,
                LayerSet::LastFraction(_) if model_layers.is_none() => true,
                _ => layers.resolve(&trace.layer_ids, model_layers)? == trace.layer_ids,
            };
            if !accept {
                return Err(AttentionError::PreAggregatedMismatch {
                    requested: layers
                        .resolve(&trace.layer_ids, model_layers)
                        .unwrap_or_default(),
                    recorded: trace.layer_ids.clone(),
                });
            }
            let m = trace
                .matrices
                .first()
                .ok_or(AttentionError::EmptyLayerSet)?;
            Ok(AggregatedMatrix {
                values: m.mapv(f64::from),
                normalized: false,
                degenerate_rows: Vec::new(),
            })
        }
        TraceMode::PerLayer => {
            let resolved = layers.resolve(&trace.layer_ids, model_layers)?;
            let selected: Vec<&Array2<f32>> = resolved
                .iter()
                .map(|l| {
                    trace
                        .layer_matrix(*l)
                        .ok_or(AttentionError::MissingLayer(*l))
                })
                .collect::<Result<_, _>>()?;
            let mut sum = Array2::<f64>::zeros(expected);
            for m in &selected {
                sum.zip_mut_with(*m, |acc, &v| *acc += f64::from(v));
            }
            let count = selected.len() as f64;
            sum.mapv_inplace(|v| v / count);
            Ok(AggregatedMatrix {
                values: sum,
                normalized: false,
                degenerate_rows: Vec::new(),
            })
        }
    }
}

/// Zeroes columns outside `context` and rescales each row to sum to one
/// inside it.
pub fn renormalize_over_context(
    agg: &AggregatedMatrix,
    context: Range<usize>,
    policy: DegenerateRowPolicy,
) -> Result<AggregatedMatrix, AttentionError> {
    let n = agg.num_cols();
    check_span(&context, n)?;
    let mut values = Array2::<f64>::zeros(agg.values.dim());
    let mut degenerate_rows = agg.degenerate_rows.clone();
    for (t, (src, mut dst)) in agg
        .values
        .rows()
        .into_iter()
        .zip(values.rows_mut())
        .enumerate()
    {
        let mass: f64 = src.iter().skip(context.start).take(context.len()).sum();
        if mass > 0.0 {
            for i in context.clone() {
                dst[i] = src[i] / mass;
            }
        } else {
            if policy == DegenerateRowPolicy::Error {
                return Err(AttentionError::ZeroContextMass(t));
            }
            let u = 1.0 / context.len() as f64;
            for i in context.clone() {
                dst[i] = u;
            }
            if !degenerate_rows.contains(&t) {
                degenerate_rows.push(t);
            }
        }
    }
    degenerate_rows.sort_unstable();
    Ok(AggregatedMatrix {
        values,
        normalized: true,
        degenerate_rows,
    })
}

fn check_span(span: &Range<usize>, n: usize) -> Result<(), AttentionError> {
    if span.is_empty() {
        return Err(AttentionError::EmptySpan);
    }
    if span.end > n {
        return Err(AttentionError::SpanOutOfRange {
            start: span.start,
            end: span.end,
            n,
        });
    }
    Ok(())
}

fn layer_row<'a>(
    trace: &'a AttentionTrace,
    layer: usize,
    t: usize,
) -> Result<ndarray::ArrayView1<'a, f32>, AttentionError> {
    let m = trace.layer_matrix(layer).ok_or_else(|| {
        if trace.layer_ids.contains(&layer) {
            AttentionError::NotPerLayer(layer)
        } else {
            AttentionError::MissingLayer(layer)
        }
    })?;
    if t >= m.nrows() {
        return Err(AttentionError::RowOutOfRange { t, len: m.nrows() });
    }
    Ok(m.row(t))
}

/// Share of a layer's context-renormalized attention from generated token `t`
/// that lands on `span`.
pub fn statement_attention_share(
    trace: &AttentionTrace,
    layer: usize,
    t: usize,
    span: Range<usize>,
) -> Result<f64, AttentionError> {
    check_span(&span, trace.num_input_tokens)?;
    let row = layer_row(trace, layer, t)?;
    Ok(share_of_row(
        row.iter().map(|&v| f64::from(v)),
        &trace.context,
        &span,
    ))
}

pub(crate) fn share_of_row(
    row: impl Iterator<Item = f64> + Clone,
    context: &Range<usize>,
    span: &Range<usize>,
) -> f64 {
    let mass: f64 = row.clone().skip(context.start).take(context.len()).sum();
    let overlap = span.start.max(context.start)..span.end.min(context.end);
    if overlap.is_empty() {
        return 0.0;
    }
    if mass > 0.0 {
        let inside: f64 = row.skip(overlap.start).take(overlap.len()).sum();
        inside / mass
    } else {
        overlap.len() as f64 / context.len() as f64
    }
}

/// 1-based rank, among all input tokens of the layer's row, of the most
/// attended token in `span`. Ties with the statement's maximum do not push
/// the rank down.
pub fn statement_rank(
    trace: &AttentionTrace,
    layer: usize,
    t: usize,
    span: Range<usize>,
) -> Result<usize, AttentionError> {
    check_span(&span, trace.num_input_tokens)?;
    let row = layer_row(trace, layer, t)?;
    let row: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
    Ok(rank_in_row(&row, &span))
}

pub(crate) fn rank_in_row(row: &[f64], span: &Range<usize>) -> usize {
    let best = row[span.clone()]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    1 + row.iter().filter(|&&v| v > best).count()
}
