//! Per-layer attention share and rank tables for named token spans, with
//! CSV export and simple SVG plots.

use std::io::Write;
use std::ops::Range;

use attrieval_core::{statement_attention_share, statement_rank, AttentionError, AttentionTrace};
use serde::{Deserialize, Serialize};

use crate::DeductionError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSpan {
    pub name: String,
    /// Input token indices.
    pub tokens: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub layer: usize,
    pub t: usize,
    pub span_id: usize,
    pub span: String,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub layer: usize,
    pub t: usize,
    pub span_id: usize,
    pub span: String,
    pub rank: usize,
}

/// Attention share of each span for every (layer, generated token), ordered
/// by (layer, t, span).
pub fn export_heatmap_data(
    trace: &AttentionTrace,
    layers: &[usize],
    spans: &[NamedSpan],
) -> Result<Vec<HeatmapRow>, AttentionError> {
    let mut rows = Vec::with_capacity(layers.len() * trace.num_generated_tokens * spans.len());
    for &layer in layers {
        for t in 0..trace.num_generated_tokens {
            for (span_id, s) in spans.iter().enumerate() {
                let share = statement_attention_share(trace, layer, t, s.tokens.clone())?;
                rows.push(HeatmapRow {
                    layer,
                    t,
                    span_id,
                    span: s.name.clone(),
                    share,
                });
            }
        }
    }
    Ok(rows)
}

/// Rank of each span's most attended token, ordered by (layer, t, span).
pub fn export_ranking_data(
    trace: &AttentionTrace,
    layers: &[usize],
    spans: &[NamedSpan],
) -> Result<Vec<RankingRow>, AttentionError> {
    let mut rows = Vec::with_capacity(layers.len() * trace.num_generated_tokens * spans.len());
    for &layer in layers {
        for t in 0..trace.num_generated_tokens {
            for (span_id, s) in spans.iter().enumerate() {
                let rank = statement_rank(trace, layer, t, s.tokens.clone())?;
                rows.push(RankingRow {
                    layer,
                    t,
                    span_id,
                    span: s.name.clone(),
                    rank,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_csv<R: Serialize>(rows: &[R], out: impl Write) -> Result<(), DeductionError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn colour(v: f64) -> String {
    let v = v.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * v).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        lerp(255.0, 180.0),
        lerp(255.0, 20.0),
        lerp(255.0, 40.0)
    )
}

/// One heatmap per span: layers on the vertical axis, generated tokens on
/// the horizontal axis, cell colour by share.
pub fn heatmap_svg(rows: &[HeatmapRow]) -> String {
    let mut layers: Vec<usize> = rows.iter().map(|r| r.layer).collect();
    layers.sort_unstable();
    layers.dedup();
    let t_max = rows.iter().map(|r| r.t + 1).max().unwrap_or(0);
    let mut spans: Vec<(usize, &str)> = rows.iter().map(|r| (r.span_id, r.span.as_str())).collect();
    spans.sort_unstable();
    spans.dedup();
    let (cell, gap, margin) = (12usize, 30usize, 60usize);
    let panel_h = layers.len() * cell;
    let width = margin + t_max * cell + 20;
    let height = spans.len() * (panel_h + gap) + gap;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"10\">\n"
    );
    for (p, (span_id, name)) in spans.iter().enumerate() {
        let top = gap + p * (panel_h + gap);
        svg.push_str(&format!(
            "<text x=\"{margin}\" y=\"{}\">{}</text>\n",
            top - 6,
            escape(name)
        ));
        for (li, layer) in layers.iter().enumerate() {
            let y = top + (layers.len() - 1 - li) * cell;
            svg.push_str(&format!(
                "<text x=\"4\" y=\"{}\">L{layer}</text>\n",
                y + cell - 2
            ));
        }
        for r in rows.iter().filter(|r| r.span_id == *span_id) {
            let li = layers.binary_search(&r.layer).expect("layer listed");
            let y = top + (layers.len() - 1 - li) * cell;
            svg.push_str(&format!(
                "<rect x=\"{}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"{}\"/>\n",
                margin + r.t * cell,
                colour(r.share)
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Rank over generated tokens, one polyline per (layer, span), log-scaled.
pub fn ranking_svg(rows: &[RankingRow]) -> String {
    let t_max = rows.iter().map(|r| r.t + 1).max().unwrap_or(1).max(2);
    let r_max = rows.iter().map(|r| r.rank).max().unwrap_or(1).max(2) as f64;
    let (w, h, m) = (640.0, 320.0, 40.0);
    let x = |t: usize| m + (w - 2.0 * m) * t as f64 / (t_max - 1) as f64;
    let y = |r: usize| m + (h - 2.0 * m) * (r as f64).ln() / r_max.ln();
    let mut keys: Vec<(usize, usize)> = rows.iter().map(|r| (r.layer, r.span_id)).collect();
    keys.sort_unstable();
    keys.dedup();
    let palette = [
        "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
    ];
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"10\">\n\
         <text x=\"4\" y=\"{}\">rank 1</text><text x=\"4\" y=\"{}\">rank {r_max}</text>\n",
        m + 3.0,
        h - m
    );
    for (i, (layer, span_id)) in keys.iter().enumerate() {
        let pts: Vec<String> = rows
            .iter()
            .filter(|r| r.layer == *layer && r.span_id == *span_id)
            .map(|r| format!("{:.1},{:.1}", x(r.t), y(r.rank)))
            .collect();
        let name = rows
            .iter()
            .find(|r| r.span_id == *span_id)
            .map_or("", |r| r.span.as_str());
        let c = palette[i % palette.len()];
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{c}\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{c}\">L{layer} {}</text>\n",
            w - m - 120.0,
            m + 12.0 * i as f64,
            escape(name)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use attrieval_core::{SimpleTokenizer, Tokenizer, TraceMode};
    use ndarray::array;

    fn trace() -> AttentionTrace {
        let prompt = " a b c d";
        AttentionTrace {
            model_id: "t".into(),
            num_input_tokens: 4,
            num_generated_tokens: 2,
            layer_ids: vec![0, 1],
            mode: TraceMode::PerLayer,
            matrices: vec![
                array![[0.1, 0.2, 0.3, 0.4], [0.4, 0.3, 0.2, 0.1]],
                array![[0.25, 0.25, 0.25, 0.25], [0.0, 0.0, 0.5, 0.5]],
            ],
            context: 0..4,
            input_tokens: SimpleTokenizer.tokenize(prompt),
            generated_tokens: SimpleTokenizer.tokenize(" x y"),
        }
    }

    fn spans() -> Vec<NamedSpan> {
        vec![
            NamedSpan {
                name: "all".into(),
                tokens: 0..4,
            },
            NamedSpan {
                name: "last".into(),
                tokens: 3..4,
            },
        ]
    }

    #[test]
    fn heatmap_rows() {
        let rows = export_heatmap_data(&trace(), &[0, 1], &spans()).unwrap();
        assert_eq!(rows.len(), 8);
        assert!(rows
            .iter()
            .filter(|r| r.span_id == 0)
            .all(|r| (r.share - 1.0).abs() < 1e-6));
        assert!((rows[1].share - 0.4).abs() < 1e-6);
        let keys: Vec<_> = rows.iter().map(|r| (r.layer, r.t, r.span_id)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("layer,t,span_id,span,share\n0,0,0,all,"));
        assert!(heatmap_svg(&rows).contains("<rect"));
    }

    #[test]
    fn ranking_rows() {
        let rows = export_ranking_data(&trace(), &[0], &spans()).unwrap();
        assert_eq!(
            rows.iter().map(|r| r.rank).collect::<Vec<_>>(),
            vec![1, 1, 1, 4]
        );
        assert!(ranking_svg(&rows).contains("<polyline"));
    }
}
