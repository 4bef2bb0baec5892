//! Answer grading and fact-recall measurement.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::instance::{DeductionInstance, Hop, Statement};

/// Case-insensitive whole-word search; `needle` must already be lowercase.
pub fn contains_word(haystack_lower: &str, needle: &str) -> bool {
    let bytes = haystack_lower.as_bytes();
    haystack_lower.match_indices(needle).any(|(i, m)| {
        let before = i.checked_sub(1).map(|j| bytes[j]);
        let after = bytes.get(i + m.len()).copied();
        !before.is_some_and(|b| b.is_ascii_alphanumeric())
            && !after.is_some_and(|b| b.is_ascii_alphanumeric())
    })
}

/// Numbers in `text`, reading `1,200` as 1200 and `3.5` as one number.
pub fn numbers_in(text: &str) -> Vec<f64> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        if !b[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let negative = i > 0 && b[i - 1] == b'-' && (i < 2 || !b[i - 2].is_ascii_alphanumeric());
        let mut digits = String::new();
        while i < b.len() {
            if b[i].is_ascii_digit() {
                digits.push(b[i] as char);
                i += 1;
            } else if b[i] == b','
                && b.get(i + 1..i + 4)
                    .is_some_and(|g| g.iter().all(u8::is_ascii_digit))
                && !b.get(i + 4).is_some_and(u8::is_ascii_digit)
            {
                i += 1;
            } else {
                break;
            }
        }
        if i + 1 < b.len() && b[i] == b'.' && b[i + 1].is_ascii_digit() {
            digits.push('.');
            i += 1;
            while i < b.len() && b[i].is_ascii_digit() {
                digits.push(b[i] as char);
                i += 1;
            }
        }
        if let Ok(v) = digits.parse::<f64>() {
            out.push(if negative { -v } else { v });
        }
    }
    out
}

/// Sentence split on `.`, `!`, `?` and newlines; a dot between digits is a
/// decimal point.
pub fn sentences(text: &str) -> Vec<&str> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    for (i, &c) in b.iter().enumerate() {
        let decimal = c == b'.'
            && i > 0
            && b[i - 1].is_ascii_digit()
            && b.get(i + 1).is_some_and(u8::is_ascii_digit);
        if matches!(c, b'.' | b'!' | b'?' | b'\n') && !decimal {
            out.push(&text[start..=i]);
            start = i + 1;
        }
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out.retain(|s| !s.trim().is_empty());
    out
}

/// True when one sentence of `text` names every entity and contains the
/// statement's number.
pub fn fact_mentioned(statement: &Statement, text: &str) -> bool {
    let names: Vec<String> = statement
        .entities()
        .iter()
        .map(|e| e.to_lowercase())
        .collect();
    let number = statement.number() as f64;
    sentences(text).into_iter().any(|s| {
        let lower = s.to_lowercase();
        names.iter().all(|n| contains_word(&lower, n)) && numbers_in(s).contains(&number)
    })
}

/// Final numeric value of a response: the last number after the last
/// "answer" marker, or in the whole text when there is none.
pub fn extract_answer(response: &str) -> Option<f64> {
    let lower = response.to_lowercase();
    let segment = match lower.rfind("answer") {
        Some(i) if !numbers_in(&response[i..]).is_empty() => &response[i..],
        _ => response,
    };
    numbers_in(segment).last().copied()
}

pub fn answer_matches(gold: f64, response: &str) -> bool {
    extract_answer(response).is_some_and(|v| {
        if gold.fract() == 0.0 {
            v == gold
        } else {
            (v - gold).abs() <= 1e-6
        }
    })
}

pub fn evaluate_answer(instance: &DeductionInstance, response: &str) -> bool {
    answer_matches(instance.answer as f64, response)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallEntry {
    pub instance_id: String,
    pub target_tokens: usize,
    /// Every first-hop gold fact was recalled.
    pub first_hop_recalled: bool,
    /// Every second-hop gold fact was recalled.
    pub second_hop_recalled: bool,
    pub overall_recall: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer_correct: Option<bool>,
}

pub fn measure_recall(instance: &DeductionInstance, text: &str) -> RecallEntry {
    let gold: Vec<&Statement> = instance.gold_statements().collect();
    let hits: Vec<(Hop, bool)> = gold
        .iter()
        .map(|s| (s.hop, fact_mentioned(s, text)))
        .collect();
    let all = |hop: Hop| hits.iter().filter(|(h, _)| *h == hop).all(|(_, ok)| *ok);
    let recalled = hits.iter().filter(|(_, ok)| *ok).count();
    RecallEntry {
        instance_id: instance.id.clone(),
        target_tokens: instance.target_tokens,
        first_hop_recalled: all(Hop::First),
        second_hop_recalled: all(Hop::Second),
        overall_recall: if gold.is_empty() {
            0.0
        } else {
            recalled as f64 / gold.len() as f64
        },
        answer_correct: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub target_tokens: usize,
    pub instances: usize,
    pub first_hop_rate: f64,
    pub second_hop_rate: f64,
    pub mean_overall_recall: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub entries: Vec<RecallEntry>,
    pub by_length: Vec<LengthSummary>,
}

impl RecallReport {
    pub fn new(entries: Vec<RecallEntry>) -> Self {
        let mut groups: BTreeMap<usize, Vec<&RecallEntry>> = BTreeMap::new();
        for e in &entries {
            groups.entry(e.target_tokens).or_default().push(e);
        }
        let by_length = groups
            .into_iter()
            .map(|(len, es)| {
                let n = es.len() as f64;
                let rate = |f: &dyn Fn(&RecallEntry) -> bool| {
                    es.iter().filter(|e| f(e)).count() as f64 / n
                };
                let graded: Vec<bool> = es.iter().filter_map(|e| e.answer_correct).collect();
                LengthSummary {
                    target_tokens: len,
                    instances: es.len(),
                    first_hop_rate: rate(&|e| e.first_hop_recalled),
                    second_hop_rate: rate(&|e| e.second_hop_recalled),
                    mean_overall_recall: es.iter().map(|e| e.overall_recall).sum::<f64>() / n,
                    accuracy: (!graded.is_empty()).then(|| {
                        graded.iter().filter(|&&c| c).count() as f64 / graded.len() as f64
                    }),
                }
            })
            .collect();
        Self { entries, by_length }
    }
}
