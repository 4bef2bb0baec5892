//! `ATRV1` trace files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ATRV1"                  5-byte magic
//! u32 header_len           length of the UTF-8 JSON header
//! header_len bytes         JSON header (dimensions, token records, sections)
//! section*                 in fixed order: attention, long_logprobs, short_logprobs
//!   [u8; 8] tag            "ATTNMATS" | "LONGLOGP" | "SHRTLOGP"
//!   u64 byte_len
//!   byte_len bytes         row-major f32 payload
//! ```
//!
//! The attention section holds one `T x N` matrix per layer in `layer_ids`
//! order (per-layer mode) or a single matrix (pre-aggregated mode). The
//! log-probability sections are `T x V`.

use std::fmt;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::tokenize::TokenRecord;
use crate::trace::{AttentionTrace, TraceError, TraceMode};

pub const MAGIC: &[u8; 5] = b"ATRV1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Attention,
    LongLogprobs,
    ShortLogprobs,
}

impl Section {
    pub const ORDER: [Section; 3] = [
        Section::Attention,
        Section::LongLogprobs,
        Section::ShortLogprobs,
    ];

    pub fn tag(self) -> &'static [u8; 8] {
        match self {
            Section::Attention => b"ATTNMATS",
            Section::LongLogprobs => b"LONGLOGP",
            Section::ShortLogprobs => b"SHRTLOGP",
        }
    }

    fn from_tag(tag: &[u8]) -> Option<Section> {
        Self::ORDER.into_iter().find(|s| s.tag() == tag)
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Section::Attention => "attention",
            Section::LongLogprobs => "long_logprobs",
            Section::ShortLogprobs => "short_logprobs",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: not an ATRV1 trace file")]
    BadMagic,
    #[error("truncated {section}: need {needed} bytes, {available} available")]
    Truncated {
        section: String,
        needed: u64,
        available: u64,
    },
    #[error("header is not valid JSON: {0}")]
    HeaderJson(#[from] serde_json::Error),
    #[error("invalid header: {0}")]
    Header(String),
    #[error("unknown section tag {0:?}")]
    UnknownSection(String),
    #[error("duplicate {0} section")]
    DuplicateSection(Section),
    #[error("{0} section out of order")]
    SectionOrder(Section),
    #[error("{0} section present but not declared in the header")]
    Undeclared(Section),
    #[error("{0} section declared in the header but missing")]
    MissingSection(Section),
    #[error(
        "{section} section holds {declared} bytes but the header dimensions require {expected}"
    )]
    DimensionMismatch {
        section: Section,
        declared: u64,
        expected: u64,
    },
    #[error("{0} trailing bytes after the last section")]
    TrailingBytes(usize),
    #[error("inconsistent trace: {0}")]
    Trace(#[from] TraceError),
    #[error("file has no attention section")]
    NoAttention,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub model_id: String,
    #[serde(rename = "N")]
    pub num_input_tokens: usize,
    #[serde(rename = "T")]
    pub num_generated_tokens: usize,
    #[serde(rename = "V")]
    pub vocab_size: usize,
    /// Depth of the model the trace was captured from, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_model_layers: Option<usize>,
    pub layer_ids: Vec<usize>,
    pub mode: TraceMode,
    pub ctx_start: usize,
    pub ctx_end: usize,
    pub input_tokens: Vec<TokenRecord>,
    pub generated_tokens: Vec<TokenRecord>,
    pub sections: Vec<Section>,
}

impl TraceHeader {
    fn matrix_count(&self) -> usize {
        match self.mode {
            TraceMode::PerLayer => self.layer_ids.len(),
            TraceMode::PreAggregated => 1,
        }
    }

    pub fn section_bytes(&self, section: Section) -> u64 {
        let t = self.num_generated_tokens as u64;
        match section {
            Section::Attention => self.matrix_count() as u64 * t * self.num_input_tokens as u64 * 4,
            Section::LongLogprobs | Section::ShortLogprobs => t * self.vocab_size as u64 * 4,
        }
    }

    fn check(&self) -> Result<(), FormatError> {
        let bad = |m: String| Err(FormatError::Header(m));
        for (i, s) in self.sections.iter().enumerate() {
            if self.sections[..i].contains(s) {
                return Err(FormatError::DuplicateSection(*s));
            }
        }
        if self.sections.windows(2).any(|w| w[0] > w[1]) {
            return bad("sections listed out of order".into());
        }
        if self.input_tokens.len() != self.num_input_tokens {
            return bad(format!(
                "{} input token records for N = {}",
                self.input_tokens.len(),
                self.num_input_tokens
            ));
        }
        if self.generated_tokens.len() != self.num_generated_tokens {
            return bad(format!(
                "{} generated token records for T = {}",
                self.generated_tokens.len(),
                self.num_generated_tokens
            ));
        }
        if self.ctx_start > self.ctx_end || self.ctx_end > self.num_input_tokens {
            return bad(format!(
                "context {}..{} outside N = {}",
                self.ctx_start, self.ctx_end, self.num_input_tokens
            ));
        }
        if self.layer_ids.windows(2).any(|w| w[0] >= w[1]) {
            return bad("layer ids not strictly increasing".into());
        }
        Ok(())
    }
}

/// Decoded trace file. Forced-pass files carry only `short_logprobs`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub attention: Option<Vec<Array2<f32>>>,
    pub long_logprobs: Option<Array2<f32>>,
    pub short_logprobs: Option<Array2<f32>>,
}

impl TraceFile {
    /// Packs a trace and optional distribution rows. `sections` is derived
    /// from what is present.
    pub fn from_trace(
        trace: &AttentionTrace,
        vocab_size: usize,
        num_model_layers: Option<usize>,
        long_logprobs: Option<Array2<f32>>,
        short_logprobs: Option<Array2<f32>>,
    ) -> Self {
        let mut file = TraceFile {
            header: TraceHeader {
                model_id: trace.model_id.clone(),
                num_input_tokens: trace.num_input_tokens,
                num_generated_tokens: trace.num_generated_tokens,
                vocab_size,
                num_model_layers,
                layer_ids: trace.layer_ids.clone(),
                mode: trace.mode,
                ctx_start: trace.context.start,
                ctx_end: trace.context.end,
                input_tokens: trace.input_tokens.clone(),
                generated_tokens: trace.generated_tokens.clone(),
                sections: Vec::new(),
            },
            attention: Some(trace.matrices.clone()),
            long_logprobs,
            short_logprobs,
        };
        file.sync_sections();
        file
    }

    pub fn sync_sections(&mut self) {
        self.header.sections = Section::ORDER
            .into_iter()
            .filter(|s| self.payload(*s).is_some())
            .collect();
    }

    fn payload(&self, section: Section) -> Option<Vec<&Array2<f32>>> {
        match section {
            Section::Attention => self.attention.as_ref().map(|v| v.iter().collect()),
            Section::LongLogprobs => self.long_logprobs.as_ref().map(|m| vec![m]),
            Section::ShortLogprobs => self.short_logprobs.as_ref().map(|m| vec![m]),
        }
    }

    pub fn to_trace(&self) -> Result<AttentionTrace, FormatError> {
        let matrices = self.attention.clone().ok_or(FormatError::NoAttention)?;
        let h = &self.header;
        let trace = AttentionTrace {
            model_id: h.model_id.clone(),
            num_input_tokens: h.num_input_tokens,
            num_generated_tokens: h.num_generated_tokens,
            layer_ids: h.layer_ids.clone(),
            mode: h.mode,
            matrices,
            context: h.ctx_start..h.ctx_end,
            input_tokens: h.input_tokens.clone(),
            generated_tokens: h.generated_tokens.clone(),
        };
        trace.validate()?;
        Ok(trace)
    }
}

/// Serializes a trace file; fails if payload shapes disagree with the header.
pub fn write_trace(file: &TraceFile) -> Result<Vec<u8>, FormatError> {
    let h = &file.header;
    h.check()?;
    let present: Vec<Section> = Section::ORDER
        .into_iter()
        .filter(|s| file.payload(*s).is_some())
        .collect();
    if present != h.sections {
        return Err(FormatError::Header(format!(
            "header lists {:?} but payloads {:?} are present",
            h.sections, present
        )));
    }
    let header = serde_json::to_vec(h)?;
    let header_len =
        u32::try_from(header.len()).map_err(|_| FormatError::Header("header too large".into()))?;
    let mut out = Vec::with_capacity(16 + header.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&header);
    for section in present {
        let mats = file.payload(section).expect("present");
        let (rows, cols) = match section {
            Section::Attention => (h.num_generated_tokens, h.num_input_tokens),
            _ => (h.num_generated_tokens, h.vocab_size),
        };
        if section == Section::Attention && mats.len() != h.matrix_count() {
            return Err(FormatError::DimensionMismatch {
                section,
                declared: (mats.len() * rows * cols * 4) as u64,
                expected: h.section_bytes(section),
            });
        }
        for m in &mats {
            if m.dim() != (rows, cols) {
                return Err(FormatError::DimensionMismatch {
                    section,
                    declared: (m.len() * 4) as u64,
                    expected: (rows * cols * 4) as u64,
                });
            }
        }
        out.extend_from_slice(section.tag());
        out.extend_from_slice(&h.section_bytes(section).to_le_bytes());
        for m in mats {
            for v in m.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: u64, section: &str) -> Result<&'a [u8], FormatError> {
        let available = (self.bytes.len() - self.pos) as u64;
        if n > available {
            return Err(FormatError::Truncated {
                section: section.to_string(),
                needed: n,
                available,
            });
        }
        let n = n as usize;
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

fn parse_header(cur: &mut Cursor<'_>) -> Result<TraceHeader, FormatError> {
    if cur.bytes.len() < MAGIC.len() || &cur.bytes[..MAGIC.len()] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    cur.pos = MAGIC.len();
    let len = u32::from_le_bytes(cur.take(4, "header length")?.try_into().expect("4 bytes"));
    let header: TraceHeader = serde_json::from_slice(cur.take(u64::from(len), "header")?)?;
    header.check()?;
    Ok(header)
}

/// Reads only the header; payloads are not touched.
pub fn read_header(bytes: &[u8]) -> Result<TraceHeader, FormatError> {
    parse_header(&mut Cursor { bytes, pos: 0 })
}

fn decode_matrix(bytes: &[u8], rows: usize, cols: usize) -> Array2<f32> {
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Array2::from_shape_vec((rows, cols), values).expect("length checked against header")
}

pub fn read_trace(bytes: &[u8]) -> Result<TraceFile, FormatError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let header = parse_header(&mut cur)?;
    let mut file = TraceFile {
        header,
        attention: None,
        long_logprobs: None,
        short_logprobs: None,
    };
    let mut last: Option<Section> = None;
    while cur.pos < bytes.len() {
        let tag = cur.take(8, "section tag")?;
        let section = Section::from_tag(tag).ok_or_else(|| {
            FormatError::UnknownSection(String::from_utf8_lossy(tag).into_owned())
        })?;
        if file.payload(section).is_some() {
            return Err(FormatError::DuplicateSection(section));
        }
        if last.is_some_and(|l| l > section) {
            return Err(FormatError::SectionOrder(section));
        }
        if !file.header.sections.contains(&section) {
            return Err(FormatError::Undeclared(section));
        }
        let name = section.to_string();
        let declared = u64::from_le_bytes(
            cur.take(8, &format!("{name} length"))?
                .try_into()
                .expect("8 bytes"),
        );
        let expected = file.header.section_bytes(section);
        if declared != expected {
            return Err(FormatError::DimensionMismatch {
                section,
                declared,
                expected,
            });
        }
        let payload = cur.take(declared, &name)?;
        let h = &file.header;
        let t = h.num_generated_tokens;
        match section {
            Section::Attention => {
                let per = t * h.num_input_tokens * 4;
                let mats = (0..h.matrix_count())
                    .map(|i| decode_matrix(&payload[i * per..(i + 1) * per], t, h.num_input_tokens))
                    .collect();
                file.attention = Some(mats);
            }
            Section::LongLogprobs => {
                file.long_logprobs = Some(decode_matrix(payload, t, h.vocab_size))
            }
            Section::ShortLogprobs => {
                file.short_logprobs = Some(decode_matrix(payload, t, h.vocab_size))
            }
        }
        last = Some(section);
    }
    if let Some(missing) = file
        .header
        .sections
        .iter()
        .find(|s| file.payload(**s).is_none())
    {
        return Err(FormatError::MissingSection(*missing));
    }
    if cur.pos != bytes.len() {
        return Err(FormatError::TrailingBytes(bytes.len() - cur.pos));
    }
    Ok(file)
}

pub fn write_trace_file(path: &Path, file: &TraceFile) -> Result<(), FormatError> {
    let bytes = write_trace(file)?;
    let tmp = path.with_extension("atrv.tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_trace_file(path: &Path) -> Result<TraceFile, FormatError> {
    read_trace(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::{SimpleTokenizer, Tokenizer};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_file(layers: usize, t: usize, n: usize, v: usize, seed: u64) -> TraceFile {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prompt: String = (0..n).map(|i| format!(" p{i}")).collect();
        let gen: String = (0..t).map(|i| format!(" g{i}")).collect();
        let mut m = || Array2::from_shape_fn((t, n), |_| rng.random::<f32>());
        let matrices: Vec<_> = (0..layers).map(|_| m()).collect();
        let trace = AttentionTrace {
            model_id: "random".into(),
            num_input_tokens: n,
            num_generated_tokens: t,
            layer_ids: (0..layers).map(|l| l + 2).collect(),
            mode: TraceMode::PerLayer,
            matrices,
            context: 1..n,
            input_tokens: SimpleTokenizer.tokenize(&prompt),
            generated_tokens: SimpleTokenizer.tokenize(&gen),
        };
        let long = Array2::from_shape_fn((t, v), |(i, j)| -(i as f32) - j as f32 * 0.5);
        TraceFile::from_trace(&trace, v, Some(8), Some(long), None)
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let f = random_file(3, 4, 16, 5, 7);
        let bytes = write_trace(&f).unwrap();
        let back = read_trace(&bytes).unwrap();
        assert_eq!(back, f);
        assert_eq!(write_trace(&back).unwrap(), bytes);
        back.to_trace().unwrap();
    }

    #[test]
    fn empty_generation_is_valid() {
        let f = random_file(2, 0, 6, 4, 1);
        let bytes = write_trace(&f).unwrap();
        let back = read_trace(&bytes).unwrap();
        assert_eq!(back.attention.as_ref().unwrap()[0].dim(), (0, 6));
        assert_eq!(back, f);
    }

    #[test]
    fn truncation_names_section() {
        let f = random_file(2, 3, 8, 4, 3);
        let bytes = write_trace(&f).unwrap();
        let err = read_trace(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(
            matches!(&err, FormatError::Truncated { section, .. } if section == "long_logprobs"),
            "{err}"
        );
        assert!(err.to_string().contains("long_logprobs"));
    }

    #[test]
    fn rejects_bad_magic_and_trailing_bytes() {
        let f = random_file(1, 2, 4, 3, 3);
        let mut bytes = write_trace(&f).unwrap();
        bytes.push(0);
        assert!(matches!(
            read_trace(&bytes),
            Err(FormatError::UnknownSection(_)) | Err(FormatError::Truncated { .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(read_trace(&bytes), Err(FormatError::BadMagic)));
        assert!(matches!(read_trace(b"ATR"), Err(FormatError::BadMagic)));
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let mut f = random_file(2, 3, 8, 4, 3);
        let bytes = write_trace(&f).unwrap();
        // claim a larger N in the header while keeping the payload
        f.header.num_input_tokens = 9;
        f.header.input_tokens.push(TokenRecord {
            text: "x".into(),
            start: 1000,
            end: 1001,
            id: 0,
        });
        let header = serde_json::to_vec(&f.header).unwrap();
        let old_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let mut forged = Vec::new();
        forged.extend_from_slice(MAGIC);
        forged.extend_from_slice(&(header.len() as u32).to_le_bytes());
        forged.extend_from_slice(&header);
        forged.extend_from_slice(&bytes[9 + old_len..]);
        assert!(matches!(
            read_trace(&forged),
            Err(FormatError::DimensionMismatch {
                section: Section::Attention,
                ..
            })
        ));
    }

    #[test]
    fn rejects_duplicate_section() {
        let f = random_file(1, 2, 4, 3, 3);
        let bytes = write_trace(&f).unwrap();
        let attn_len = f.header.section_bytes(Section::Attention) as usize + 16;
        let header_end = 9 + u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let mut dup = bytes[..header_end + attn_len].to_vec();
        dup.extend_from_slice(&bytes[header_end..header_end + attn_len]);
        assert!(matches!(
            read_trace(&dup),
            Err(FormatError::DuplicateSection(Section::Attention))
        ));
    }

    #[test]
    fn writer_rejects_inconsistent_payloads() {
        let mut f = random_file(2, 3, 8, 4, 3);
        f.long_logprobs = Some(Array2::zeros((3, 5)));
        assert!(matches!(
            write_trace(&f),
            Err(FormatError::DimensionMismatch {
                section: Section::LongLogprobs,
                ..
            })
        ));
        let mut f = random_file(2, 3, 8, 4, 3);
        f.short_logprobs = Some(Array2::zeros((3, 4)));
        assert!(matches!(write_trace(&f), Err(FormatError::Header(_))));
    }

    #[test]
    fn header_only_read() {
        let f = random_file(2, 3, 8, 4, 3);
        let bytes = write_trace(&f).unwrap();
        let header_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let h = read_header(&bytes[..9 + header_len]).unwrap();
        assert_eq!(h, f.header);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_any_shape(layers in 1usize..4, t in 0usize..5, n in 2usize..12, v in 1usize..6, seed in any::<u64>()) {
            let f = random_file(layers, t, n, v, seed);
            let bytes = write_trace(&f).unwrap();
            let back = read_trace(&bytes).unwrap();
            prop_assert_eq!(write_trace(&back).unwrap(), bytes);
        }
    }
}
