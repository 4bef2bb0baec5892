//! In-memory attention traces captured from a chain-of-thought generation.

use std::ops::Range;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::tokenize::TokenRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceMode {
    /// One head-averaged `T x N` matrix per stored layer.
    PerLayer,
    /// A single matrix already averaged over the recorded layer set.
    PreAggregated,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TraceError {
    #[error("matrix {index} has shape {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    Shape {
        index: usize,
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("expected {expected} attention matrices, found {found}")]
    MatrixCount { expected: usize, found: usize },
    #[error("negative or non-finite attention weight at matrix {matrix}, row {row}, col {col}")]
    BadWeight {
        matrix: usize,
        row: usize,
        col: usize,
    },
    #[error("context span {start}..{end} invalid for {n} input tokens")]
    ContextSpan { start: usize, end: usize, n: usize },
    #[error("layer ids must be strictly increasing")]
    LayerOrder,
    #[error("{which} token records: expected {expected}, found {found}")]
    TokenCount {
        which: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{which} token {index} has overlapping or inverted byte offsets")]
    TokenOffsets { which: &'static str, index: usize },
}

/// Attention from each generated token to each input-prompt token.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub model_id: String,
    pub num_input_tokens: usize,
    pub num_generated_tokens: usize,
    pub layer_ids: Vec<usize>,
    pub mode: TraceMode,
    /// Row `t` holds the weights generated token `t` places on input tokens.
    pub matrices: Vec<Array2<f32>>,
    /// Token interval of the context region inside the prompt.
    pub context: Range<usize>,
    pub input_tokens: Vec<TokenRecord>,
    pub generated_tokens: Vec<TokenRecord>,
}

impl AttentionTrace {
    pub fn validate(&self) -> Result<(), TraceError> {
        let (t, n) = (self.num_generated_tokens, self.num_input_tokens);
        let expected = match self.mode {
            TraceMode::PerLayer => self.layer_ids.len(),
            TraceMode::PreAggregated => 1,
        };
        if self.matrices.len() != expected {
            return Err(TraceError::MatrixCount {
                expected,
                found: self.matrices.len(),
            });
        }
        if self.layer_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TraceError::LayerOrder);
        }
        if self.context.start >= self.context.end || self.context.end > n {
            return Err(TraceError::ContextSpan {
                start: self.context.start,
                end: self.context.end,
                n,
            });
        }
        for (index, m) in self.matrices.iter().enumerate() {
            let (rows, cols) = m.dim();
            if rows != t || cols != n {
                return Err(TraceError::Shape {
                    index,
                    rows,
                    cols,
                    expected_rows: t,
                    expected_cols: n,
                });
            }
            if let Some(((row, col), _)) = m
                .indexed_iter()
                .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
            {
                return Err(TraceError::BadWeight {
                    matrix: index,
                    row,
                    col,
                });
            }
        }
        check_tokens("input", &self.input_tokens, n)?;
        check_tokens("generated", &self.generated_tokens, t)?;
        Ok(())
    }

    /// Concatenated text of the generated tokens.
    pub fn generated_text(&self) -> String {
        self.generated_tokens
            .iter()
            .map(|t| t.text.as_str())
            .collect()
    }

    /// Returns a copy with every attention weight multiplied by `factor`.
    pub fn scaled(&self, factor: f32) -> Self {
        let mut out = self.clone();
        for m in &mut out.matrices {
            m.mapv_inplace(|v| v * factor);
        }
        out
    }

    pub fn layer_matrix(&self, layer: usize) -> Option<&Array2<f32>> {
        if self.mode != TraceMode::PerLayer {
            return None;
        }
        self.layer_ids
            .iter()
            .position(|&l| l == layer)
            .map(|i| &self.matrices[i])
    }
}

fn check_tokens(
    which: &'static str,
    tokens: &[TokenRecord],
    expected: usize,
) -> Result<(), TraceError> {
    if tokens.len() != expected {
        return Err(TraceError::TokenCount {
            which,
            expected,
            found: tokens.len(),
        });
    }
    let mut prev_end = 0;
    for (index, tok) in tokens.iter().enumerate() {
        if tok.start > tok.end || tok.start < prev_end {
            return Err(TraceError::TokenOffsets { which, index });
        }
        prev_end = tok.end;
    }
    Ok(())
}

/// Teacher-forced log-probability rows for the same CoT token sequence under
/// the long (context) prompt and the short (question-only) prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistributionPair {
    pub token_ids: Vec<u32>,
    pub long_logprobs: Array2<f32>,
    pub short_logprobs: Array2<f32>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::{SimpleTokenizer, Tokenizer};
    use ndarray::array;

    fn small() -> AttentionTrace {
        AttentionTrace {
            model_id: "test".into(),
            num_input_tokens: 3,
            num_generated_tokens: 1,
            layer_ids: vec![0, 1],
            mode: TraceMode::PerLayer,
            matrices: vec![array![[0.2, 0.3, 0.5]], array![[0.1, 0.1, 0.8]]],
            context: 0..2,
            input_tokens: SimpleTokenizer.tokenize("a b c"),
            generated_tokens: SimpleTokenizer.tokenize("x"),
        }
    }

    #[test]
    fn valid_trace_passes() {
        small().validate().unwrap();
    }

    #[test]
    fn rejects_negative_weight() {
        let mut tr = small();
        tr.matrices[1][[0, 2]] = -0.1;
        assert_eq!(
            tr.validate(),
            Err(TraceError::BadWeight {
                matrix: 1,
                row: 0,
                col: 2
            })
        );
    }

    #[test]
    fn rejects_unordered_layers_and_bad_span() {
        let mut tr = small();
        tr.layer_ids = vec![3, 3];
        assert_eq!(tr.validate(), Err(TraceError::LayerOrder));
        let mut tr = small();
        tr.context = 2..4;
        assert!(matches!(tr.validate(), Err(TraceError::ContextSpan { .. })));
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut tr = small();
        tr.matrices[0] = array![[0.5, 0.5]];
        assert!(matches!(
            tr.validate(),
            Err(TraceError::Shape { index: 0, .. })
        ));
    }
}
