//! Answer-pass prompt: the original prompt with retrieved clauses inserted
//! between the pre-question material and the question.

use serde::{Deserialize, Serialize};

use crate::retrieval::RetrievedFact;
use crate::task::TaskInput;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptMode {
    Default,
    /// Adds a notice that clause indices follow context order.
    OrderSensitive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptTemplates {
    pub header: String,
    pub order_sensitive_header: String,
    pub order_notice: String,
    /// Clause line; `{index}` and `{text}` are substituted.
    pub clause: String,
    /// Line used when nothing was retrieved.
    pub empty: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            header: "Some clauses extracted from the context that might be related:".into(),
            order_sensitive_header: "Some clauses are extracted from the context that might be related:".into(),
            order_notice: "Notice that the clause indices represents the order of them appearing in the context. \
                           Larger clause indices indicate that they appear later in the context. \
                           The answer to the question is sensitive to the order in the context. \
                           The clauses only serve as a hint, please check the original context for exact information."
                .into(),
            clause: "clause {index}: {text}".into(),
            empty: "none extracted".into(),
        }
    }
}

/// Renders the clause block, facts sorted by their position in the context.
pub fn render_clauses(facts: &[RetrievedFact], templates: &PromptTemplates) -> String {
    if facts.is_empty() {
        return templates.empty.clone();
    }
    let mut ordered: Vec<&RetrievedFact> = facts.iter().collect();
    ordered.sort_by_key(|f| (f.bytes.start, f.fact_id));
    ordered
        .iter()
        .map(|f| {
            templates
                .clause
                .replace("{index}", &f.fact_id.to_string())
                .replace("{text}", &f.text)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn build_augmented_prompt(
    task: &TaskInput,
    facts: &[RetrievedFact],
    mode: PromptMode,
    templates: &PromptTemplates,
) -> String {
    let clauses = render_clauses(facts, templates);
    match mode {
        PromptMode::Default => format!(
            "{}\n\n{}\n{}\n\n{}",
            task.prefix, templates.header, clauses, task.question
        ),
        PromptMode::OrderSensitive => format!(
            "{}\n\n{}\n{}\n\n{}\n\n{}",
            task.prefix,
            templates.order_sensitive_header,
            clauses,
            templates.order_notice,
            task.question
        ),
    }
}
