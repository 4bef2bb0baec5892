//! Generation backends: the capability contract the pipeline drives, a
//! seeded synthetic backend with planted attention, and a replay backend over
//! trace files.

use std::ops::Range;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::format::{FormatError, TraceFile};
use crate::tokenize::{fnv1a32, fnv1a64, SimpleTokenizer, TokenRecord, Tokenizer};
use crate::trace::{AttentionTrace, TraceMode};

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("backend does not support {0}")]
    Unsupported(&'static str),
    #[error("token budget must be at least 1")]
    ZeroBudget,
    #[error("no tokens to score")]
    EmptySequence,
    #[error("prompt does not match the backend: {0}")]
    PromptMismatch(String),
    #[error("infeasible synthetic trace: {0}")]
    Infeasible(String),
    #[error("token sequence mismatch: {0}")]
    TokenMismatch(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Output of the capture pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Capture {
    pub trace: AttentionTrace,
    /// Long-prompt log-probability rows for the generated tokens, if the
    /// backend records them during generation.
    pub long_logprobs: Option<Array2<f32>>,
    pub num_model_layers: Option<usize>,
    pub vocab_size: usize,
}

impl Capture {
    pub fn token_ids(&self) -> Vec<u32> {
        self.trace.generated_tokens.iter().map(|t| t.id).collect()
    }
}

pub trait GenerationBackend {
    /// Generates under `prompt`, recording attention from each generated
    /// token to every prompt token. `context` is the context byte span.
    fn generate_with_capture(
        &mut self,
        prompt: &str,
        context: Range<usize>,
        budget: usize,
    ) -> Result<Capture, BackendError>;

    /// Teacher-forced log-probability rows of `tokens` continuing `prompt`.
    fn force_score(&mut self, _prompt: &str, _tokens: &[u32]) -> Result<Array2<f32>, BackendError> {
        Err(BackendError::Unsupported("teacher-forced scoring"))
    }

    fn generate(&mut self, prompt: &str, budget: usize) -> Result<String, BackendError>;
}

/// Token range whose byte spans intersect `bytes`.
pub fn tokens_overlapping(tokens: &[TokenRecord], bytes: &Range<usize>) -> Range<usize> {
    let start = tokens.partition_point(|t| t.end <= bytes.start);
    let end = tokens.partition_point(|t| t.start < bytes.end);
    start..end.max(start)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpan {
    /// Prompt token indices receiving the mass, uniformly.
    pub tokens: Range<usize>,
    /// Fraction of each affected row's attention placed on the span.
    pub mass: f64,
    /// Generated-token rows that carry the span; all rows when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTraceSpec {
    pub num_input_tokens: usize,
    pub num_generated_tokens: usize,
    /// Context token span inside the prompt.
    pub context: Range<usize>,
    #[serde(default)]
    pub planted: Vec<PlantedSpan>,
    /// Mass placed on prompt token 0, which must lie outside the context.
    #[serde(default)]
    pub bos_mass: f64,
    #[serde(default)]
    pub noise_seed: u64,
    #[serde(default = "default_layers")]
    pub layer_ids: Vec<usize>,
    #[serde(default)]
    pub num_model_layers: Option<usize>,
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    /// Scripted CoT token texts; `" step{t}"` words otherwise.
    #[serde(default)]
    pub cot_tokens: Option<Vec<String>>,
    /// Scripted long-prompt rows (log-probabilities), one per CoT token.
    #[serde(default)]
    pub long_logprobs: Option<Vec<Vec<f32>>>,
    /// Scripted rows returned when scoring under any other prompt.
    #[serde(default)]
    pub short_logprobs: Option<Vec<Vec<f32>>>,
    #[serde(default)]
    pub answer: String,
}

fn default_layers() -> Vec<usize> {
    vec![0, 1, 2, 3]
}

fn default_vocab() -> usize {
    32
}

impl SyntheticTraceSpec {
    /// Spec sized to `prompt` as tokenized by [`SimpleTokenizer`], with the
    /// context token span derived from the context byte span.
    pub fn for_prompt(
        prompt: &str,
        context_bytes: &Range<usize>,
        num_generated_tokens: usize,
    ) -> Self {
        let tokens = SimpleTokenizer.tokenize(prompt);
        Self {
            num_input_tokens: tokens.len(),
            num_generated_tokens,
            context: tokens_overlapping(&tokens, context_bytes),
            planted: Vec::new(),
            bos_mass: 0.0,
            noise_seed: 0,
            layer_ids: default_layers(),
            num_model_layers: None,
            vocab_size: default_vocab(),
            cot_tokens: None,
            long_logprobs: None,
            short_logprobs: None,
            answer: String::new(),
        }
    }

    /// Plants `mass` on the prompt tokens overlapping `bytes`.
    pub fn plant_bytes(
        &mut self,
        prompt: &str,
        bytes: &Range<usize>,
        mass: f64,
        rows: Option<Vec<usize>>,
    ) {
        let tokens = SimpleTokenizer.tokenize(prompt);
        self.planted.push(PlantedSpan {
            tokens: tokens_overlapping(&tokens, bytes),
            mass,
            rows,
        });
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: String| Err(BackendError::Infeasible(m));
        let ctx = &self.context;
        if ctx.is_empty() || ctx.end > self.num_input_tokens {
            return bad(format!(
                "context {ctx:?} invalid for N = {}",
                self.num_input_tokens
            ));
        }
        if self.layer_ids.is_empty() || self.layer_ids.windows(2).any(|w| w[0] >= w[1]) {
            return bad("layer ids must be non-empty and strictly increasing".into());
        }
        if !(0.0..=1.0).contains(&self.bos_mass) || (self.bos_mass > 0.0 && ctx.start == 0) {
            return bad("bos mass needs token 0 outside the context and a value in [0, 1]".into());
        }
        let mut total = self.bos_mass;
        for (i, p) in self.planted.iter().enumerate() {
            if p.tokens.is_empty() || p.tokens.start < ctx.start || p.tokens.end > ctx.end {
                return bad(format!(
                    "planted span {:?} outside context {ctx:?}",
                    p.tokens
                ));
            }
            if !(p.mass >= 0.0 && p.mass <= 1.0) {
                return bad(format!("planted mass {} outside [0, 1]", p.mass));
            }
            if let Some(q) = self.planted[..i]
                .iter()
                .find(|q| q.tokens.start < p.tokens.end && p.tokens.start < q.tokens.end)
            {
                return bad(format!(
                    "planted spans {:?} and {:?} overlap",
                    q.tokens, p.tokens
                ));
            }
            if let Some(rows) = &p.rows {
                if let Some(r) = rows.iter().find(|&&r| r >= self.num_generated_tokens) {
                    return bad(format!(
                        "planted row {r} beyond T = {}",
                        self.num_generated_tokens
                    ));
                }
            }
            total += p.mass;
        }
        if total > 1.0 + 1e-12 {
            return bad(format!("planted and bos mass sum to {total} > 1"));
        }
        let planted_tokens: usize = self.planted.iter().map(|p| p.tokens.len()).sum();
        if total < 1.0 - 1e-12 && planted_tokens >= ctx.len() {
            return bad("no free context tokens left for the residual mass".into());
        }
        for (name, rows) in [
            ("long", &self.long_logprobs),
            ("short", &self.short_logprobs),
        ] {
            if let Some(rows) = rows {
                if rows.len() < self.num_generated_tokens
                    || rows.iter().any(|r| r.len() != self.vocab_size)
                {
                    return bad(format!(
                        "scripted {name} rows must be {} x {}",
                        self.num_generated_tokens, self.vocab_size
                    ));
                }
            }
        }
        if let Some(toks) = &self.cot_tokens {
            if toks.len() < self.num_generated_tokens {
                return bad(format!(
                    "{} scripted tokens for T = {}",
                    toks.len(),
                    self.num_generated_tokens
                ));
            }
        }
        Ok(())
    }
}

/// Deterministic backend with attention planted on chosen token spans.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    spec: SyntheticTraceSpec,
    seed: u64,
    captured_prompt: Option<String>,
}

pub fn make_synthetic_backend(
    spec: SyntheticTraceSpec,
    seed: u64,
) -> Result<SyntheticBackend, BackendError> {
    spec.validate()?;
    Ok(SyntheticBackend {
        spec,
        seed,
        captured_prompt: None,
    })
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(a << 6)
        .wrapping_add(a >> 2);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SyntheticBackend {
    pub fn spec(&self) -> &SyntheticTraceSpec {
        &self.spec
    }

    fn cot_records(&self, t: usize) -> Vec<TokenRecord> {
        let mut out = Vec::with_capacity(t);
        let mut pos = 0;
        for i in 0..t {
            let text = match &self.spec.cot_tokens {
                Some(v) => v[i].clone(),
                None => format!(" step{i}"),
            };
            let id = fnv1a32(text.as_bytes()) % self.spec.vocab_size.max(1) as u32;
            out.push(TokenRecord {
                start: pos,
                end: pos + text.len(),
                text,
                id,
            });
            pos = out[i].end;
        }
        out
    }

    /// One attention row in `f64`.
    fn attention_row(&self, rng: &mut ChaCha8Rng, t: usize) -> Vec<f64> {
        let spec = &self.spec;
        let mut row = vec![0.0f64; spec.num_input_tokens];
        let mut occupied = vec![false; spec.num_input_tokens];
        let mut used = spec.bos_mass;
        if spec.bos_mass > 0.0 {
            row[0] = spec.bos_mass;
        }
        for p in &spec.planted {
            if p.rows.as_ref().is_some_and(|r| !r.contains(&t)) {
                continue;
            }
            let each = p.mass / p.tokens.len() as f64;
            for i in p.tokens.clone() {
                row[i] = each;
                occupied[i] = true;
            }
            used += p.mass;
        }
        let residual = (1.0 - used).max(0.0);
        let free: Vec<usize> = spec.context.clone().filter(|&i| !occupied[i]).collect();
        let draws: Vec<f64> = free.iter().map(|_| rng.random::<f64>() + 1e-6).collect();
        let total: f64 = draws.iter().sum();
        for (&i, d) in free.iter().zip(draws) {
            row[i] = residual * d / total;
        }
        row
    }

    fn logprob_row(&self, prompt_hash: u64, t: usize) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(self.seed, prompt_hash), t as u64));
        let logits: Vec<f64> = (0..self.spec.vocab_size)
            .map(|_| rng.random::<f64>() * 4.0)
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        logits.iter().map(|l| (l - lse) as f32).collect()
    }

    fn rows(&self, prompt: &str, t: usize) -> Array2<f32> {
        let is_long = self.captured_prompt.as_deref() == Some(prompt);
        let scripted = if is_long {
            &self.spec.long_logprobs
        } else {
            &self.spec.short_logprobs
        };
        let v = self.spec.vocab_size;
        match scripted {
            Some(rows) => Array2::from_shape_fn((t, v), |(i, j)| rows[i][j]),
            None => {
                let h = fnv1a64(prompt.as_bytes());
                let mut out = Array2::zeros((t, v));
                for i in 0..t {
                    for (j, x) in self.logprob_row(h, i).into_iter().enumerate() {
                        out[[i, j]] = x;
                    }
                }
                out
            }
        }
    }
}

impl GenerationBackend for SyntheticBackend {
    fn generate_with_capture(
        &mut self,
        prompt: &str,
        context: Range<usize>,
        budget: usize,
    ) -> Result<Capture, BackendError> {
        if budget == 0 {
            return Err(BackendError::ZeroBudget);
        }
        let input_tokens = SimpleTokenizer.tokenize(prompt);
        if input_tokens.len() != self.spec.num_input_tokens {
            return Err(BackendError::PromptMismatch(format!(
                "prompt has {} tokens, spec expects {}",
                input_tokens.len(),
                self.spec.num_input_tokens
            )));
        }
        let ctx = tokens_overlapping(&input_tokens, &context);
        if ctx != self.spec.context {
            return Err(BackendError::PromptMismatch(format!(
                "context tokens {ctx:?} differ from spec {:?}",
                self.spec.context
            )));
        }
        let t = self.spec.num_generated_tokens.min(budget);
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, self.spec.noise_seed));
        let n = self.spec.num_input_tokens;
        let mut matrices = Vec::with_capacity(self.spec.layer_ids.len());
        for _ in &self.spec.layer_ids {
            let mut m = Array2::<f32>::zeros((t, n));
            for row in 0..t {
                for (i, v) in self.attention_row(&mut rng, row).into_iter().enumerate() {
                    m[[row, i]] = v as f32;
                }
            }
            matrices.push(m);
        }
        let trace = AttentionTrace {
            model_id: "synthetic".into(),
            num_input_tokens: n,
            num_generated_tokens: t,
            layer_ids: self.spec.layer_ids.clone(),
            mode: TraceMode::PerLayer,
            matrices,
            context: self.spec.context.clone(),
            input_tokens,
            generated_tokens: self.cot_records(t),
        };
        self.captured_prompt = Some(prompt.to_string());
        let long_logprobs = Some(self.rows(prompt, t));
        Ok(Capture {
            trace,
            long_logprobs,
            num_model_layers: self.spec.num_model_layers,
            vocab_size: self.spec.vocab_size,
        })
    }

    fn force_score(&mut self, prompt: &str, tokens: &[u32]) -> Result<Array2<f32>, BackendError> {
        if tokens.is_empty() {
            return Err(BackendError::EmptySequence);
        }
        if tokens.len() > self.spec.num_generated_tokens {
            return Err(BackendError::TokenMismatch(format!(
                "{} tokens exceed the {} scripted positions",
                tokens.len(),
                self.spec.num_generated_tokens
            )));
        }
        Ok(self.rows(prompt, tokens.len()))
    }

    fn generate(&mut self, _prompt: &str, budget: usize) -> Result<String, BackendError> {
        if budget == 0 {
            return Err(BackendError::ZeroBudget);
        }
        let toks = SimpleTokenizer.tokenize(&self.spec.answer);
        let end = toks
            .get(budget.min(toks.len()).wrapping_sub(1))
            .map_or(0, |t| t.end);
        Ok(self.spec.answer[..end].to_string())
    }
}

/// Serves a previously captured trace file. The answer pass is available only
/// when an answer text is supplied.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    cot: TraceFile,
    forced: Option<TraceFile>,
    answer: Option<String>,
}

impl ReplayBackend {
    pub fn new(cot: TraceFile, forced: Option<TraceFile>, answer: Option<String>) -> Self {
        Self {
            cot,
            forced,
            answer,
        }
    }
}

impl GenerationBackend for ReplayBackend {
    fn generate_with_capture(
        &mut self,
        prompt: &str,
        _context: Range<usize>,
        budget: usize,
    ) -> Result<Capture, BackendError> {
        if budget == 0 {
            return Err(BackendError::ZeroBudget);
        }
        if let Some((i, tok)) = self
            .cot
            .header
            .input_tokens
            .iter()
            .enumerate()
            .find(|(_, tok)| prompt.get(tok.start..tok.end) != Some(tok.text.as_str()))
        {
            return Err(BackendError::PromptMismatch(format!(
                "input token {i} ({:?}) not found at its offsets",
                tok.text
            )));
        }
        let mut trace = self.cot.to_trace()?;
        let mut long = self.cot.long_logprobs.clone();
        if budget < trace.num_generated_tokens {
            trace.num_generated_tokens = budget;
            trace.generated_tokens.truncate(budget);
            for m in &mut trace.matrices {
                *m = m.slice(ndarray::s![..budget, ..]).to_owned();
            }
            long = long.map(|m| m.slice(ndarray::s![..budget, ..]).to_owned());
        }
        Ok(Capture {
            trace,
            long_logprobs: long,
            num_model_layers: self.cot.header.num_model_layers,
            vocab_size: self.cot.header.vocab_size,
        })
    }

    fn force_score(&mut self, _prompt: &str, tokens: &[u32]) -> Result<Array2<f32>, BackendError> {
        if tokens.is_empty() {
            return Err(BackendError::EmptySequence);
        }
        let forced = self
            .forced
            .as_ref()
            .ok_or(BackendError::Unsupported("teacher-forced scoring"))?;
        let rows = forced
            .short_logprobs
            .as_ref()
            .ok_or(BackendError::Unsupported("teacher-forced scoring"))?;
        let recorded: Vec<u32> = forced
            .header
            .generated_tokens
            .iter()
            .map(|t| t.id)
            .collect();
        if !recorded.starts_with(tokens) {
            return Err(BackendError::TokenMismatch(
                "forced-pass token ids differ from the CoT".into(),
            ));
        }
        if forced.header.vocab_size != self.cot.header.vocab_size {
            return Err(BackendError::TokenMismatch(format!(
                "vocabulary {} differs from CoT vocabulary {}",
                forced.header.vocab_size, self.cot.header.vocab_size
            )));
        }
        Ok(rows.slice(ndarray::s![..tokens.len(), ..]).to_owned())
    }

    fn generate(&mut self, _prompt: &str, budget: usize) -> Result<String, BackendError> {
        if budget == 0 {
            return Err(BackendError::ZeroBudget);
        }
        self.answer
            .clone()
            .ok_or(BackendError::Unsupported("answer generation"))
    }
}
