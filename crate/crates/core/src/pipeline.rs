//! The two-pass retrieval loop: capture a CoT with attention, score context
//! facts against it, then answer with the retrieved clauses in the prompt.

use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attention::{
    aggregate_attention, renormalize_over_context, AttentionError, DegenerateRowPolicy,
};
use crate::backend::{BackendError, Capture, GenerationBackend};
use crate::config::{ConfigError, RetrievalConfig, TokenSubset};
use crate::prompt::{build_augmented_prompt, PromptMode, PromptTemplates};
use crate::retrieval::{retrieve, FactScoreTable, RetrievalError, RetrievedFact};
use crate::segment::{segment_facts, FactSegmentation};
use crate::task::{TaskError, TaskInput};
use crate::token_selection::{select_retriever_tokens, SelectionError};
use crate::trace::{AttentionTrace, TokenDistributionPair};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("task: {0}")]
    Task(#[from] TaskError),
    #[error("cot pass: {0}")]
    CotPass(#[source] BackendError),
    #[error("forced pass: {0}")]
    ForcedPass(#[source] BackendError),
    #[error("aggregation: {0}")]
    Aggregation(#[from] AttentionError),
    #[error("token selection: {0}")]
    TokenSelection(#[from] SelectionError),
    #[error("retrieval: {0}")]
    Retrieval(#[from] RetrievalError),
    #[error("answer pass: {0}")]
    AnswerPass(#[source] BackendError),
    #[error("trace does not match the task: {0}")]
    TraceMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// CoT only; the CoT is the answer.
    Cot,
    Attrieval,
    /// Scores facts with KL-selected retriever tokens only.
    AttrievalKl,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cot" => Ok(Mode::Cot),
            "attrieval" => Ok(Mode::Attrieval),
            "attrieval-kl" => Ok(Mode::AttrievalKl),
            other => Err(format!(
                "unknown mode '{other}' (expected cot, attrieval or attrieval-kl)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub retrieval: RetrievalConfig,
    pub prompts: PromptTemplates,
    /// Forces a prompt layout; otherwise the task's `order_sensitive` flag decides.
    pub prompt_mode: Option<PromptMode>,
    pub cot_budget: usize,
    pub answer_budget: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            retrieval: RetrievalConfig::default(),
            prompts: PromptTemplates::default(),
            prompt_mode: None,
            cot_budget: 512,
            answer_budget: 512,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.retrieval.validate()?;
        if self.cot_budget == 0 || self.answer_budget == 0 {
            return Err(ConfigError::Invalid(
                "token budgets must be at least 1".into(),
            ));
        }
        Ok(())
    }

    fn prompt_mode(&self, task: &TaskInput) -> PromptMode {
        self.prompt_mode.unwrap_or(if task.order_sensitive {
            PromptMode::OrderSensitive
        } else {
            PromptMode::Default
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub cot_pass_ms: f64,
    pub forced_pass_ms: f64,
    pub retrieval_ms: f64,
    pub answer_pass_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttrievalResult {
    pub task_id: String,
    pub mode: Mode,
    pub cot_text: String,
    pub cot_tokens: usize,
    /// Retrieved facts in rank order; `bytes.start` gives the context position.
    pub retrieved: Vec<RetrievedFact>,
    /// CoT positions whose attention was averaged into fact scores.
    pub token_subset: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl_scores: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score_table: Option<FactScoreTable>,
    pub augmented_prompt: Option<String>,
    pub final_answer: Option<String>,
    pub degenerate_rows: Vec<usize>,
    pub warnings: Vec<String>,
    pub timings: StageTimings,
}

/// Stages 1-3 on an already captured trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRetrieval {
    pub segmentation: FactSegmentation,
    pub table: FactScoreTable,
    pub retrieved: Vec<RetrievedFact>,
    pub token_subset: Vec<usize>,
    pub kl_scores: Option<Vec<f64>>,
    pub degenerate_rows: Vec<usize>,
    pub topk_sets: Vec<Vec<usize>>,
}

/// Aggregates, segments and scores. With `distributions`, and a KL token
/// rule in the config, only retriever tokens contribute to scores.
pub fn retrieve_from_trace(
    trace: &AttentionTrace,
    task: &TaskInput,
    config: &RetrievalConfig,
    num_model_layers: Option<usize>,
    distributions: Option<&TokenDistributionPair>,
) -> Result<TraceRetrieval, PipelineError> {
    config.validate()?;
    trace
        .validate()
        .map_err(|e| PipelineError::TraceMismatch(e.to_string()))?;
    if trace.num_generated_tokens == 0 {
        return Err(RetrievalError::NoGeneratedTokens.into());
    }
    let ctx_bytes = task.context.clone();
    let raw = aggregate_attention(trace, &config.layers, num_model_layers)?;
    let scoring = if config.renormalize {
        renormalize_over_context(&raw, trace.context.clone(), DegenerateRowPolicy::Uniform)?
    } else {
        raw.clone()
    };
    if trace
        .input_tokens
        .get(trace.context.end - 1)
        .is_some_and(|t| t.start >= ctx_bytes.end)
        || trace
            .input_tokens
            .get(trace.context.start)
            .is_some_and(|t| t.end <= ctx_bytes.start)
    {
        return Err(PipelineError::TraceMismatch(
            "context token span does not cover the task context".into(),
        ));
    }
    let segmentation = segment_facts(
        task.context_text(),
        ctx_bytes.start,
        &trace.input_tokens,
        trace.context.clone(),
    );

    let (token_subset, kl_scores) = match (config.token_subset, distributions) {
        (TokenSubset::KlTopS { s }, Some(pair)) => {
            let sel = select_retriever_tokens(pair, s)?;
            (sel.selected, Some(sel.divergences))
        }
        _ => ((0..trace.num_generated_tokens).collect(), None),
    };
    let outcome = retrieve(&scoring, &raw, &segmentation, config, &token_subset)?;
    Ok(TraceRetrieval {
        segmentation,
        table: outcome.table,
        retrieved: outcome.retrieved,
        token_subset,
        kl_scores,
        degenerate_rows: scoring.degenerate_rows,
        topk_sets: outcome.topk_sets,
    })
}

/// Generates the CoT under the long prompt with attention capture.
pub fn run_cot_pass(
    backend: &mut dyn GenerationBackend,
    task: &TaskInput,
    config: &PipelineConfig,
) -> Result<Capture, PipelineError> {
    if config.cot_budget == 0 {
        return Err(PipelineError::CotPass(BackendError::ZeroBudget));
    }
    let prompt = task.long_prompt();
    let cap = backend
        .generate_with_capture(&prompt.text, prompt.context, config.cot_budget)
        .map_err(PipelineError::CotPass)?;
    cap.trace
        .validate()
        .map_err(|e| PipelineError::TraceMismatch(e.to_string()))?;
    Ok(cap)
}

/// Teacher-forces the CoT tokens under the short prompt.
pub fn run_forced_pass(
    backend: &mut dyn GenerationBackend,
    short_prompt: &str,
    cot_tokens: &[u32],
) -> Result<Array2<f32>, PipelineError> {
    if cot_tokens.is_empty() {
        return Err(PipelineError::ForcedPass(BackendError::EmptySequence));
    }
    backend
        .force_score(short_prompt, cot_tokens)
        .map_err(PipelineError::ForcedPass)
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Runs the selected mode end to end.
pub fn run(
    backend: &mut dyn GenerationBackend,
    task: &TaskInput,
    config: &PipelineConfig,
    mode: Mode,
) -> Result<AttrievalResult, PipelineError> {
    config.validate()?;
    task.validate()?;
    let mut timings = StageTimings::default();
    let mut warnings = Vec::new();

    let started = Instant::now();
    let cap = run_cot_pass(backend, task, config)?;
    timings.cot_pass_ms = ms(started);
    let cot_text = cap.trace.generated_text();
    let cot_tokens = cap.trace.num_generated_tokens;

    if mode == Mode::Cot {
        return Ok(AttrievalResult {
            task_id: task.id.clone(),
            mode,
            final_answer: Some(cot_text.clone()),
            cot_text,
            cot_tokens,
            retrieved: Vec::new(),
            token_subset: Vec::new(),
            kl_scores: None,
            score_table: None,
            augmented_prompt: None,
            degenerate_rows: Vec::new(),
            warnings,
            timings,
        });
    }

    let mut retrieval_cfg = config.retrieval.clone();
    if mode == Mode::AttrievalKl {
        if retrieval_cfg.token_subset == TokenSubset::All {
            retrieval_cfg.token_subset = TokenSubset::KlTopS {
                s: crate::config::DEFAULT_KL_TOKENS,
            };
        }
    } else {
        retrieval_cfg.token_subset = TokenSubset::All;
    }

    let mut distributions = None;
    if matches!(retrieval_cfg.token_subset, TokenSubset::KlTopS { .. }) {
        let started = Instant::now();
        match distributions_for(backend, task, &cap) {
            Ok(pair) => distributions = Some(pair),
            Err(PipelineError::ForcedPass(BackendError::Unsupported(what))) => {
                let msg = format!("backend lacks {what}; scoring with all CoT tokens");
                log::warn!("{msg}");
                warnings.push(msg);
            }
            Err(e) => return Err(e),
        }
        timings.forced_pass_ms = ms(started);
    }

    let started = Instant::now();
    let tr = retrieve_from_trace(
        &cap.trace,
        task,
        &retrieval_cfg,
        cap.num_model_layers,
        distributions.as_ref(),
    )?;
    timings.retrieval_ms = ms(started);
    if !tr.degenerate_rows.is_empty() {
        warnings.push(format!(
            "{} CoT rows had no context attention and were made uniform",
            tr.degenerate_rows.len()
        ));
    }
    if tr.table.sink_fallback {
        warnings.push("every fact was an attention sink; ranked without sink filtering".into());
    }

    let augmented = build_augmented_prompt(
        task,
        &tr.retrieved,
        config.prompt_mode(task),
        &config.prompts,
    );
    let started = Instant::now();
    let final_answer = match backend.generate(&augmented, config.answer_budget) {
        Ok(a) => Some(a),
        Err(BackendError::Unsupported(what)) => {
            warnings.push(format!("backend lacks {what}; answer pass skipped"));
            None
        }
        Err(e) => return Err(PipelineError::AnswerPass(e)),
    };
    timings.answer_pass_ms = ms(started);

    Ok(AttrievalResult {
        task_id: task.id.clone(),
        mode,
        cot_text,
        cot_tokens,
        retrieved: tr.retrieved,
        token_subset: tr.token_subset,
        kl_scores: tr.kl_scores,
        score_table: Some(tr.table),
        augmented_prompt: Some(augmented),
        final_answer,
        degenerate_rows: tr.degenerate_rows,
        warnings,
        timings,
    })
}

fn distributions_for(
    backend: &mut dyn GenerationBackend,
    task: &TaskInput,
    cap: &Capture,
) -> Result<TokenDistributionPair, PipelineError> {
    let ids = cap.token_ids();
    let long = match &cap.long_logprobs {
        Some(l) => l.clone(),
        None => run_forced_pass(backend, &task.long_prompt().text, &ids)?,
    };
    let short = run_forced_pass(backend, &task.short_prompt().text, &ids)?;
    Ok(TokenDistributionPair {
        token_ids: ids,
        long_logprobs: long,
        short_logprobs: short,
    })
}
