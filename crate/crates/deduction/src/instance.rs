//! Instance generation: entities, unique values, the relational chain and
//! self-contained distractors.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::haystack::{embed_in_haystack, Filler};
use crate::problem::{ProblemType, POOL_SIZE};
use crate::DeductionError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Entities on the chain that leads to the answer.
    pub main_entities: usize,
    pub distractor_entities: usize,
    /// Context lengths in tokens; 0 means the statements alone.
    pub target_lengths: Vec<usize>,
    /// Haystack text; the bundled corpus when absent.
    pub filler_path: Option<std::path::PathBuf>,
    pub instances_per_length: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            main_entities: 2,
            distractor_entities: 6,
            target_lengths: vec![0, 4096, 8192, 16384, 32768],
            filler_path: None,
            instances_per_length: 100,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), DeductionError> {
        if self.main_entities < 2 {
            return Err(DeductionError::InvalidConfig(
                "main_entities must be at least 2".into(),
            ));
        }
        let needed = self.main_entities + self.distractor_entities;
        if needed > POOL_SIZE {
            return Err(DeductionError::PoolExhausted {
                needed,
                available: POOL_SIZE,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Main,
    Distractor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    pub value: u32,
    pub role: Role,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hop {
    /// Explicit value statement.
    First,
    /// Relational statement, relevant only once another fact is resolved.
    Second,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Relation {
    Value {
        entity: String,
        value: u32,
    },
    /// `subject = reference + diff` when `greater`, else `reference - diff`.
    Difference {
        subject: String,
        reference: String,
        diff: u32,
        greater: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub text: String,
    pub relation: Relation,
    pub role: Role,
    pub hop: Hop,
    /// Byte span of `text` in the instance context.
    pub span: Range<usize>,
}

impl Statement {
    pub fn entities(&self) -> Vec<&str> {
        match &self.relation {
            Relation::Value { entity, .. } => vec![entity],
            Relation::Difference {
                subject, reference, ..
            } => vec![subject, reference],
        }
    }

    pub fn number(&self) -> u32 {
        match self.relation {
            Relation::Value { value, .. } => value,
            Relation::Difference { diff, .. } => diff,
        }
    }

    pub fn is_gold(&self) -> bool {
        self.role == Role::Main
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeductionInstance {
    pub id: String,
    pub seed: u64,
    pub problem_type: ProblemType,
    pub entities: Vec<Entity>,
    /// Gold facts and distractors in context order.
    pub statements: Vec<Statement>,
    pub question: String,
    /// Entity the question asks about.
    pub target: String,
    pub answer: u32,
    pub unit: String,
    pub context: String,
    pub target_tokens: usize,
    pub context_tokens: usize,
}

impl DeductionInstance {
    pub fn gold_statements(&self) -> impl Iterator<Item = &Statement> {
        self.statements.iter().filter(|s| s.is_gold())
    }

    /// The explicitly valued main entity that starts the chain.
    pub fn anchor(&self) -> &Entity {
        &self.entities[0]
    }
}

/// Per-instance seed, stable across platforms.
pub fn instance_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn unique_values(rng: &mut ChaCha8Rng, count: usize, (lo, hi): (u32, u32)) -> Vec<u32> {
    let mut out: Vec<u32> = Vec::with_capacity(count);
    while out.len() < count {
        let v = rng.random_range(lo..=hi);
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

fn relate(p: ProblemType, subject: &Entity, reference: &Entity, role: Role) -> Statement {
    let greater = subject.value > reference.value;
    let diff = subject.value.abs_diff(reference.value);
    Statement {
        text: p.relational(&subject.name, diff, greater, &reference.name),
        relation: Relation::Difference {
            subject: subject.name.clone(),
            reference: reference.name.clone(),
            diff,
            greater,
        },
        role,
        hop: Hop::Second,
        span: 0..0,
    }
}

fn state(p: ProblemType, e: &Entity, role: Role) -> Statement {
    Statement {
        text: p.explicit(&e.name, e.value),
        relation: Relation::Value {
            entity: e.name.clone(),
            value: e.value,
        },
        role,
        hop: Hop::First,
        span: 0..0,
    }
}

/// Generates an instance whose context holds only the statements.
pub fn generate_instance(
    config: &BenchConfig,
    seed: u64,
) -> Result<DeductionInstance, DeductionError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = ProblemType::ALL[rng.random_range(0..ProblemType::ALL.len() as u32) as usize];
    let mut names = p.entities().to_vec();
    names.shuffle(&mut rng);
    let count = config.main_entities + config.distractor_entities;
    let values = unique_values(&mut rng, count, p.value_range());
    let entities: Vec<Entity> = names
        .iter()
        .zip(&values)
        .enumerate()
        .take(count)
        .map(|(i, (name, &value))| Entity {
            name: name.to_string(),
            value,
            role: if i < config.main_entities {
                Role::Main
            } else {
                Role::Distractor
            },
        })
        .collect();
    let (main, distractors) = entities.split_at(config.main_entities);

    let mut statements = vec![state(p, &main[0], Role::Main)];
    for w in main.windows(2) {
        statements.push(relate(p, &w[1], &w[0], Role::Main));
    }
    for pair in distractors.chunks(2) {
        statements.push(state(p, &pair[0], Role::Distractor));
        if let Some(second) = pair.get(1) {
            statements.push(relate(p, second, &pair[0], Role::Distractor));
        }
    }
    statements.shuffle(&mut rng);

    let target = main.last().expect("at least two main entities");
    let mut inst = DeductionInstance {
        id: format!("deduction-{seed:016x}"),
        seed,
        problem_type: p,
        question: p.question(&target.name),
        target: target.name.clone(),
        answer: target.value,
        unit: p.unit().to_string(),
        entities,
        statements,
        context: String::new(),
        target_tokens: 0,
        context_tokens: 0,
    };
    crate::haystack::place_statements(&mut inst, &[], &[]);
    Ok(inst)
}

/// Generates every configured length, `instances_per_length` each, in parallel.
/// Output order is (length, index) regardless of scheduling.
pub fn generate_dataset(
    config: &BenchConfig,
    filler: &Filler,
) -> Result<Vec<DeductionInstance>, DeductionError> {
    config.validate()?;
    let jobs: Vec<(usize, u64)> = config
        .target_lengths
        .iter()
        .flat_map(|&len| (0..config.instances_per_length as u64).map(move |i| (len, i)))
        .collect();
    jobs.par_iter()
        .map(|&(len, i)| {
            let seed = instance_seed(instance_seed(config.seed, len as u64), i);
            let mut inst = generate_instance(config, seed)?;
            embed_in_haystack(&mut inst, filler, len, seed ^ 0x5eed)?;
            inst.id = format!("deduction-{len}-{i}");
            Ok(inst)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_answer_and_shape() {
        let cfg = BenchConfig {
            main_entities: 3,
            ..BenchConfig::default()
        };
        let inst = generate_instance(&cfg, 11).unwrap();
        assert_eq!(inst.entities.len(), 9);
        assert_eq!(inst.statements.len(), 3 + 6);
        assert_eq!(inst.gold_statements().count(), 3);
        assert_eq!(inst.answer, inst.entities[2].value);
        let mut values: Vec<u32> = inst.entities.iter().map(|e| e.value).collect();
        values.sort_unstable();
        values.dedup();
        assert_eq!(values.len(), 9);
        for s in &inst.statements {
            assert_eq!(&inst.context[s.span.clone()], s.text);
        }
    }

    #[test]
    fn deterministic() {
        let cfg = BenchConfig::default();
        let a = serde_json::to_string(&generate_instance(&cfg, 5).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_instance(&cfg, 5).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pool_limits() {
        let cfg = BenchConfig {
            main_entities: 10,
            distractor_entities: 6,
            ..BenchConfig::default()
        };
        assert!(matches!(
            generate_instance(&cfg, 0),
            Err(DeductionError::PoolExhausted { needed: 16, .. })
        ));
        let cfg = BenchConfig {
            main_entities: 1,
            ..BenchConfig::default()
        };
        assert!(generate_instance(&cfg, 0).is_err());
    }

    #[test]
    fn odd_distractor_count() {
        let cfg = BenchConfig {
            distractor_entities: 3,
            ..BenchConfig::default()
        };
        let inst = generate_instance(&cfg, 2).unwrap();
        assert_eq!(
            inst.statements
                .iter()
                .filter(|s| s.role == Role::Distractor)
                .count(),
            3
        );
    }
}
