//! Retrieval outputs against an independent brute-force recomputation.

mod support {
    pub mod oracle;
}

use attrieval_core::attention::{
    aggregate_attention, renormalize_over_context, DegenerateRowPolicy,
};
use attrieval_core::{retrieve, segment_facts};
use support::oracle::{brute_force, random_case};

#[test]
fn matches_brute_force() {
    for seed in 0..300 {
        let case = random_case(seed);
        let want = brute_force(&case);
        let raw = aggregate_attention(&case.trace, &case.config.layers, None).unwrap();
        let scoring = if case.config.renormalize {
            renormalize_over_context(
                &raw,
                case.trace.context.clone(),
                DegenerateRowPolicy::Uniform,
            )
            .unwrap()
        } else {
            raw.clone()
        };
        let seg = segment_facts(
            case.task.context_text(),
            case.task.context.start,
            &case.trace.input_tokens,
            case.trace.context.clone(),
        );
        let owned: Vec<Vec<usize>> = (0..seg.len())
            .map(|c| {
                seg.context_tokens
                    .clone()
                    .filter(|&i| seg.fact_of(i) == Some(c))
                    .collect()
            })
            .collect();
        assert_eq!(owned, case.fact_tokens, "seed {seed}: segmentation");

        let got = retrieve(&scoring, &raw, &seg, &case.config, &case.subset).unwrap();
        assert_eq!(got.topk_sets, want.topk, "seed {seed}: top-k");
        let freqs: Vec<f64> = got.table.facts.iter().map(|f| f.frequency).collect();
        assert_eq!(freqs, want.freqs, "seed {seed}: frequency");
        let sinks: Vec<bool> = got.table.facts.iter().map(|f| f.sink).collect();
        assert_eq!(sinks, want.sinks, "seed {seed}: sinks");
        assert_eq!(
            got.table.sink_fallback, want.fallback,
            "seed {seed}: fallback"
        );
        for (f, w) in got.table.facts.iter().zip(&want.scores) {
            match (f.score, w) {
                (Some(a), Some(b)) => {
                    assert!((a - b).abs() <= 1e-9, "seed {seed}: score {a} vs {b}")
                }
                (None, None) => {}
                other => panic!("seed {seed}: score presence differs {other:?}"),
            }
        }
        let selected: Vec<usize> = got.retrieved.iter().map(|r| r.fact_id).collect();
        assert_eq!(selected, want.selected, "seed {seed}: selection");
    }
}
