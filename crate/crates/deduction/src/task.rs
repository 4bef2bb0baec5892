//! Conversion of instances into pipeline tasks under each evaluation mode.

use serde::{Deserialize, Serialize};

use attrieval_core::TaskInput;

use crate::instance::DeductionInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    Standard,
    /// Gold facts repeated after the context.
    LeakInfo,
    /// Asks for the anchor entity's explicitly stated value.
    SecondHopOnly,
}

impl std::str::FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(EvalMode::Standard),
            "leak-info" => Ok(EvalMode::LeakInfo),
            "second-hop-only" => Ok(EvalMode::SecondHopOnly),
            other => Err(format!("unknown evaluation mode '{other}'")),
        }
    }
}

pub fn gold_answer(instance: &DeductionInstance, mode: EvalMode) -> u32 {
    match mode {
        EvalMode::SecondHopOnly => instance.anchor().value,
        _ => instance.answer,
    }
}

pub fn to_task(instance: &DeductionInstance, mode: EvalMode) -> TaskInput {
    let mut prefix = format!(
        "Below is a long text. Some statements about {} are hidden inside it. \
         Read the text and answer the question that follows.\n\n",
        instance.problem_type.topic()
    );
    let offset = prefix.len();
    prefix.push_str(&instance.context);
    let context = offset..prefix.len();
    if mode == EvalMode::LeakInfo {
        let facts: Vec<&str> = instance
            .gold_statements()
            .map(|s| s.text.as_str())
            .collect();
        prefix.push_str("\n\nThe relevant statements are: ");
        prefix.push_str(&facts.join(" "));
    }
    let question = match mode {
        EvalMode::SecondHopOnly => instance.problem_type.question(&instance.anchor().name),
        _ => instance.question.clone(),
    };
    TaskInput {
        id: instance.id.clone(),
        dataset: "deduction".into(),
        prefix,
        context,
        separator: "\n\n".into(),
        question: format!(
            "Question: {question} Think step by step, then finish with \"The answer is <number>.\""
        ),
        answers: vec![gold_answer(instance, mode).to_string()],
        gold_facts: instance
            .gold_statements()
            .map(|s| s.span.start + offset..s.span.end + offset)
            .collect(),
        order_sensitive: false,
    }
}
