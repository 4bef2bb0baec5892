//! Attention-guided fact retrieval over long contexts.
//!
//! A model's chain-of-thought attention is aggregated over the upper layers,
//! context sentences that the reasoning tokens attend to are scored, and the
//! best of them are inserted into a second answer prompt.

pub mod attention;
pub mod backend;
pub mod config;
pub mod format;
pub mod pipeline;
pub mod prompt;
pub mod retrieval;
pub mod segment;
pub mod task;
pub mod token_selection;
pub mod tokenize;
pub mod trace;

pub use attention::{
    aggregate_attention, renormalize_over_context, statement_attention_share, statement_rank,
    AggregatedMatrix, AttentionError, DegenerateRowPolicy, LayerSet,
};
pub use backend::{
    make_synthetic_backend, BackendError, Capture, GenerationBackend, PlantedSpan, ReplayBackend,
    SyntheticBackend, SyntheticTraceSpec,
};
pub use config::{ConfigError, RetrievalConfig, TokenSubset, TopkDomain};
pub use format::{
    read_trace, read_trace_file, write_trace, write_trace_file, FormatError, TraceFile, TraceHeader,
};
pub use pipeline::{
    retrieve_from_trace, run, AttrievalResult, Mode, PipelineConfig, PipelineError, TraceRetrieval,
};
pub use prompt::{build_augmented_prompt, PromptMode, PromptTemplates};
pub use retrieval::{
    retrieve, FactScore, FactScoreTable, RetrievalError, RetrievalOutcome, RetrievedFact,
};
pub use segment::{segment_facts, Fact, FactSegmentation};
pub use task::{Prompt, TaskInput};
pub use token_selection::{
    kl_divergence, select_retriever_tokens, RetrieverTokens, SelectionError,
};
pub use tokenize::{SimpleTokenizer, TokenRecord, Tokenizer};
pub use trace::{AttentionTrace, TokenDistributionPair, TraceError, TraceMode};
