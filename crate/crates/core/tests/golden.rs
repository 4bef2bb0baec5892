//! Golden trace fixture and corrupted variants.
//!
//! Set `ATTRIEVAL_REGEN_FIXTURES=1` to rewrite the fixtures after an
//! intentional format change (which also requires a new magic).

use std::path::PathBuf;

use attrieval_core::format::{
    read_header, read_trace, write_trace, FormatError, Section, TraceFile,
};
use attrieval_core::{AttentionTrace, SimpleTokenizer, Tokenizer, TraceMode};
use ndarray::Array2;

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Small trace with exactly representable values.
fn golden() -> TraceFile {
    let prompt = "Notes: A is 5. B is 7.\nQ: B?";
    let cot = " B is 7";
    let input_tokens = SimpleTokenizer.tokenize(prompt);
    let generated_tokens = SimpleTokenizer.tokenize(cot);
    let (n, t, v) = (input_tokens.len(), generated_tokens.len(), 4);
    let matrices = (0..2)
        .map(|l| Array2::from_shape_fn((t, n), |(r, c)| ((r * n + c + l) % 8) as f32 / 16.0))
        .collect();
    let trace = AttentionTrace {
        model_id: "golden".into(),
        num_input_tokens: n,
        num_generated_tokens: t,
        layer_ids: vec![6, 7],
        mode: TraceMode::PerLayer,
        matrices,
        context: 2..10,
        input_tokens,
        generated_tokens,
    };
    let long = Array2::from_shape_fn((t, v), |(r, c)| if c == r % v { -0.25 } else { -2.0 });
    let short = Array2::from_shape_fn((t, v), |(_, c)| -1.0 - c as f32 * 0.5);
    TraceFile::from_trace(&trace, v, Some(8), Some(long), Some(short))
}

fn section_offset(bytes: &[u8], section: Section) -> usize {
    bytes
        .windows(8)
        .position(|w| w == section.tag())
        .expect("section tag present")
}

fn corruptions(golden: &[u8]) -> Vec<(&'static str, Vec<u8>)> {
    let mut bad_magic = golden.to_vec();
    bad_magic[4] = b'2';

    let truncated_short = golden[..golden.len() - 1].to_vec();

    let attn = section_offset(golden, Section::Attention);
    let truncated_attention = golden[..attn + 16 + 10].to_vec();

    let long = section_offset(golden, Section::LongLogprobs);
    let short = section_offset(golden, Section::ShortLogprobs);
    let mut duplicate_long = golden[..short].to_vec();
    duplicate_long.extend_from_slice(&golden[long..short]);
    duplicate_long.extend_from_slice(&golden[short..]);

    let mut dimension_attention = golden.to_vec();
    let len = u64::from_le_bytes(golden[attn + 8..attn + 16].try_into().unwrap());
    dimension_attention[attn + 8..attn + 16].copy_from_slice(&(len - 4).to_le_bytes());
    dimension_attention.drain(attn + 16..attn + 20);

    vec![
        ("bad_magic.atrv", bad_magic),
        ("truncated_short_logprobs.atrv", truncated_short),
        ("truncated_attention.atrv", truncated_attention),
        ("duplicate_long_logprobs.atrv", duplicate_long),
        ("dimension_mismatch_attention.atrv", dimension_attention),
    ]
}

fn regenerate() -> bool {
    std::env::var_os("ATTRIEVAL_REGEN_FIXTURES").is_some()
}

#[test]
fn golden_fixture_is_stable() {
    let bytes = write_trace(&golden()).unwrap();
    let path = fixture_dir().join("golden_v1.atrv");
    if regenerate() {
        std::fs::write(&path, &bytes).unwrap();
    }
    let on_disk = std::fs::read(&path).expect("golden fixture checked in");
    assert_eq!(
        bytes, on_disk,
        "writer output drifted from the golden fixture"
    );
    let parsed = read_trace(&on_disk).unwrap();
    assert_eq!(parsed, golden());
    assert_eq!(write_trace(&parsed).unwrap(), on_disk);
    assert_eq!(read_header(&on_disk).unwrap(), golden().header);
}

#[test]
fn corrupted_fixtures_fail_with_section_errors() {
    let golden_bytes = write_trace(&golden()).unwrap();
    for (name, bytes) in corruptions(&golden_bytes) {
        let path = fixture_dir().join(name);
        if regenerate() {
            std::fs::write(&path, &bytes).unwrap();
        }
        assert_eq!(std::fs::read(&path).unwrap(), bytes, "{name} drifted");
    }
    let read =
        |name: &str| read_trace(&std::fs::read(fixture_dir().join(name)).unwrap()).unwrap_err();
    assert!(matches!(read("bad_magic.atrv"), FormatError::BadMagic));
    assert!(
        matches!(read("truncated_short_logprobs.atrv"), FormatError::Truncated { section, .. } if section == "short_logprobs")
    );
    assert!(
        matches!(read("truncated_attention.atrv"), FormatError::Truncated { section, .. } if section == "attention")
    );
    assert!(matches!(
        read("duplicate_long_logprobs.atrv"),
        FormatError::DuplicateSection(Section::LongLogprobs)
    ));
    assert!(matches!(
        read("dimension_mismatch_attention.atrv"),
        FormatError::DimensionMismatch {
            section: Section::Attention,
            ..
        }
    ));
    assert!(read("truncated_short_logprobs.atrv")
        .to_string()
        .contains("short_logprobs"));
}
