//! Brute-force recomputation of aggregation, top-k, frequency, sinks, scores
//! and selection straight from their definitions, plus a random case
//! generator whose fact boundaries are known by construction.

#![allow(dead_code)]

use attrieval_core::{
    AttentionTrace, LayerSet, RetrievalConfig, SimpleTokenizer, TaskInput, Tokenizer, TopkDomain,
    TraceMode,
};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Case {
    pub trace: AttentionTrace,
    pub task: TaskInput,
    pub config: RetrievalConfig,
    /// Layers the oracle averages.
    pub layers: Vec<usize>,
    pub subset: Vec<usize>,
    /// Context token indices of each fact, from construction.
    pub fact_tokens: Vec<Vec<usize>>,
}

pub struct Expected {
    pub topk: Vec<Vec<usize>>,
    pub freqs: Vec<f64>,
    pub sinks: Vec<bool>,
    pub scores: Vec<Option<f64>>,
    pub selected: Vec<usize>,
    pub fallback: bool,
}

fn value(rng: &mut ChaCha8Rng) -> f32 {
    if rng.random_bool(0.5) {
        rng.random_range(0..8u32) as f32 / 8.0
    } else {
        rng.random::<f32>()
    }
}

pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ctx = String::new();
    let mut fact_tokens = Vec::new();
    let mut next = 2;
    let max_ctx_tokens = 27;
    for f in 0..rng.random_range(1..=6u32) {
        let words = rng.random_range(1..=5usize);
        if next - 2 + words + 1 > max_ctx_tokens {
            break;
        }
        for w in 0..words {
            ctx.push_str(&format!(" w{f}x{w}"));
        }
        ctx.push('.');
        fact_tokens.push((next..next + words + 1).collect::<Vec<_>>());
        next += words + 1;
    }
    let prefix = format!("Read:{ctx}");
    let task = TaskInput {
        id: format!("case{seed}"),
        dataset: "oracle".into(),
        context: 5..prefix.len(),
        prefix,
        separator: "\n".into(),
        question: "Ask?".into(),
        answers: vec![],
        gold_facts: vec![],
        order_sensitive: false,
    };
    let prompt = task.long_prompt().text;
    let input_tokens = SimpleTokenizer.tokenize(&prompt);
    let n = input_tokens.len();
    assert!(n <= 32, "prompt has {n} tokens");
    let context = 2..next;

    let t = rng.random_range(1..=8usize);
    let num_layers = rng.random_range(1..=4usize);
    let mut layer_ids: Vec<usize> = (0..8).collect();
    layer_ids.shuffle(&mut rng);
    layer_ids.truncate(num_layers);
    layer_ids.sort_unstable();

    let degenerate: Vec<bool> = (0..t).map(|_| rng.random_bool(0.1)).collect();
    let matrices = (0..num_layers)
        .map(|_| {
            Array2::from_shape_fn((t, n), |(r, c)| {
                if degenerate[r] && context.contains(&c) {
                    0.0
                } else {
                    value(&mut rng)
                }
            })
        })
        .collect();
    let generated: String = (0..t).map(|i| format!(" g{i}")).collect();
    let trace = AttentionTrace {
        model_id: "oracle".into(),
        num_input_tokens: n,
        num_generated_tokens: t,
        layer_ids: layer_ids.clone(),
        mode: TraceMode::PerLayer,
        matrices,
        context,
        input_tokens,
        generated_tokens: SimpleTokenizer.tokenize(&generated),
    };

    let (rule, layers) = match rng.random_range(0..3u32) {
        0 => (LayerSet::All, layer_ids.clone()),
        1 => {
            let keep = (num_layers as f64 * 0.25).ceil() as usize;
            (
                LayerSet::LastFraction(0.25),
                layer_ids[num_layers - keep..].to_vec(),
            )
        }
        _ => {
            let mut pick: Vec<usize> = layer_ids
                .iter()
                .copied()
                .filter(|_| rng.random_bool(0.5))
                .collect();
            if pick.is_empty() {
                pick.push(layer_ids[0]);
            }
            (LayerSet::Explicit(pick.clone()), pick)
        }
    };
    let config = RetrievalConfig {
        k: rng.random_range(1..=12),
        tau: [0.3, 0.5, 0.75, 0.99, 1.0][rng.random_range(0..5usize)],
        min_tokens: rng.random_range(1..=4),
        max_facts: rng.random_range(1..=6),
        layers: rule,
        renormalize: rng.random_bool(0.8),
        topk_domain: if rng.random_bool(0.2) {
            TopkDomain::FullPrompt
        } else {
            TopkDomain::Context
        },
        ..RetrievalConfig::default()
    };
    let subset = if rng.random_bool(0.5) {
        (0..t).collect()
    } else {
        let mut s: Vec<usize> = (0..t).filter(|_| rng.random_bool(0.5)).collect();
        if s.is_empty() {
            s.push(rng.random_range(0..t));
        }
        s
    };
    Case {
        trace,
        task,
        config,
        layers,
        subset,
        fact_tokens,
    }
}

pub fn brute_force(case: &Case) -> Expected {
    let tr = &case.trace;
    let (t, n) = (tr.num_generated_tokens, tr.num_input_tokens);
    let ctx: Vec<usize> = tr.context.clone().collect();

    let mut raw = vec![vec![0.0f64; n]; t];
    for (r, row) in raw.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            let mut sum = 0.0;
            for &l in &case.layers {
                let pos = tr.layer_ids.iter().position(|&x| x == l).unwrap();
                sum += tr.matrices[pos][[r, c]] as f64;
            }
            *cell = sum / case.layers.len() as f64;
        }
    }
    let scoring: Vec<Vec<f64>> = if case.config.renormalize {
        raw.iter()
            .map(|row| {
                let mass: f64 = ctx.iter().map(|&c| row[c]).sum();
                (0..n)
                    .map(|c| match (ctx.contains(&c), mass > 0.0) {
                        (false, _) => 0.0,
                        (true, true) => row[c] / mass,
                        (true, false) => 1.0 / ctx.len() as f64,
                    })
                    .collect()
            })
            .collect()
    } else {
        raw.clone()
    };

    let (rank_rows, columns): (&Vec<Vec<f64>>, Vec<usize>) = match case.config.topk_domain {
        TopkDomain::Context => (&scoring, ctx.clone()),
        TopkDomain::FullPrompt => (&raw, (0..n).collect()),
    };
    let topk: Vec<Vec<usize>> = rank_rows
        .iter()
        .map(|row| {
            let mut cols = columns.clone();
            cols.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
            cols.truncate(case.config.k);
            cols.sort_unstable();
            cols
        })
        .collect();

    let facts = &case.fact_tokens;
    let freqs: Vec<f64> = facts
        .iter()
        .map(|toks| {
            topk.iter()
                .filter(|set| set.iter().any(|i| toks.contains(i)))
                .count() as f64
                / t as f64
        })
        .collect();
    let sinks: Vec<bool> = freqs.iter().map(|&f| f >= case.config.tau).collect();
    let fallback = sinks.iter().all(|&s| s);

    let scores: Vec<Option<f64>> = facts
        .iter()
        .enumerate()
        .map(|(c, toks)| {
            if sinks[c] && !fallback {
                return None;
            }
            let mut outer = 0.0;
            for &i in toks {
                let mut inner = 0.0;
                for &s in &case.subset {
                    inner += scoring[s][i];
                }
                outer += inner * (1.0 / case.subset.len() as f64);
            }
            Some(outer / toks.len() as f64)
        })
        .collect();

    let mut ranked: Vec<usize> = (0..facts.len())
        .filter(|&c| scores[c].is_some() && facts[c].len() >= case.config.min_tokens)
        .collect();
    ranked.sort_by(|&a, &b| {
        scores[b]
            .unwrap()
            .partial_cmp(&scores[a].unwrap())
            .unwrap()
            .then(a.cmp(&b))
    });
    ranked.truncate(case.config.max_facts);

    Expected {
        topk,
        freqs,
        sinks,
        scores,
        selected: ranked,
        fallback,
    }
}
