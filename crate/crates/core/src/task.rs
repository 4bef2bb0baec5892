//! Dataset-agnostic task description and prompt assembly.

use std::ops::Range;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TaskError {
    #[error("context span {0:?} is not a valid byte range of the prefix")]
    ContextSpan(Range<usize>),
    #[error("gold fact span {0:?} lies outside the context")]
    GoldSpan(Range<usize>),
}

fn default_separator() -> String {
    "\n\n".to_string()
}

/// One question over one long context.
///
/// The long prompt is `prefix + separator + question`. `prefix` holds
/// everything before the question, including the context at byte span
/// `context`; `question` holds everything from the question onward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInput {
    pub id: String,
    #[serde(default)]
    pub dataset: String,
    pub prefix: String,
    pub context: Range<usize>,
    #[serde(default = "default_separator")]
    pub separator: String,
    pub question: String,
    #[serde(default)]
    pub answers: Vec<String>,
    /// Byte spans of the supporting facts, in prefix coordinates.
    #[serde(default)]
    pub gold_facts: Vec<Range<usize>>,
    /// Renders retrieved clauses with the order-sensitivity notice.
    #[serde(default)]
    pub order_sensitive: bool,
}

/// A prompt string and the byte span of its context region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub text: String,
    pub context: Range<usize>,
}

impl TaskInput {
    pub fn validate(&self) -> Result<(), TaskError> {
        let c = &self.context;
        if c.start > c.end || self.prefix.get(c.clone()).is_none() {
            return Err(TaskError::ContextSpan(c.clone()));
        }
        if let Some(g) = self
            .gold_facts
            .iter()
            .find(|g| g.start < c.start || g.end > c.end || g.start > g.end)
        {
            return Err(TaskError::GoldSpan(g.clone()));
        }
        Ok(())
    }

    pub fn context_text(&self) -> &str {
        &self.prefix[self.context.clone()]
    }

    /// The prompt with the context, used for the CoT capture pass.
    pub fn long_prompt(&self) -> Prompt {
        Prompt {
            text: format!("{}{}{}", self.prefix, self.separator, self.question),
            context: self.context.clone(),
        }
    }

    /// The same template with the context removed; the question-only prompt
    /// used for cross-evaluation.
    pub fn short_prompt(&self) -> Prompt {
        let mut text = String::with_capacity(self.prefix.len() + self.question.len());
        text.push_str(&self.prefix[..self.context.start]);
        text.push_str(&self.prefix[self.context.end..]);
        let at = self.context.start;
        text.push_str(&self.separator);
        text.push_str(&self.question);
        Prompt {
            text,
            context: at..at,
        }
    }
}
