//! Synthetic multi-hop benchmark: numeric facts linked by pairwise
//! differences, hidden in filler text, with answer grading, fact-recall
//! measurement and attention analysis exports.

pub mod analysis;
pub mod grade;
pub mod haystack;
pub mod instance;
pub mod problem;
pub mod task;

use std::io::{BufRead, Write};

pub use analysis::{export_heatmap_data, export_ranking_data, HeatmapRow, NamedSpan, RankingRow};
pub use grade::{evaluate_answer, measure_recall, RecallEntry, RecallReport};
pub use haystack::{embed_in_haystack, Filler};
pub use instance::{
    generate_dataset, generate_instance, BenchConfig, DeductionInstance, Hop, Relation, Role,
    Statement,
};
pub use problem::ProblemType;
pub use task::{to_task, EvalMode};

#[derive(Debug, thiserror::Error)]
pub enum DeductionError {
    #[error("invalid bench config: {0}")]
    InvalidConfig(String),
    #[error("{needed} entities requested but each problem type has {available}")]
    PoolExhausted { needed: usize, available: usize },
    #[error("target of {target} tokens is shorter than the {needed} tokens of statements")]
    TargetTooShort { target: usize, needed: usize },
    #[error("filler text contains no sentences")]
    EmptyFiller,
    #[error("line {line}: {source}")]
    Jsonl {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_jsonl<T: serde::Serialize>(
    items: &[T],
    mut out: impl Write,
) -> Result<(), DeductionError> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(
    input: impl BufRead,
) -> Result<Vec<T>, DeductionError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| DeductionError::Jsonl {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}
