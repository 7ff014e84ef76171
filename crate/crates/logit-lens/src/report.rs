//! Heatmaps, sweep tables and probe tables as SVG, CSV and JSON.
//!
//! Every writer is a pure function of its input. Numbers are stored as f32
//! and printed in shortest round-trip form (at most 9 significant digits),
//! so JSON output parses back to the identical structure.

use std::fmt::Write as _;
use std::str::FromStr;

use logit_lens_core::metrics::layer_sweep;
use logit_lens_core::{HiddenStateTrace, Model};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe_curves::LayerCurvePoint;
use crate::sweep::{StatSummary, SweepResult};

pub const HEATMAP_SCHEMA: &str = "logit-lens/heatmap-v1";
pub const PROBE_SCHEMA: &str = "logit-lens/probe-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    MaxProb,
    CrossEntropy,
    ForwardKl,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [Self::MaxProb, Self::CrossEntropy, Self::ForwardKl];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::MaxProb => "max_prob",
            Self::CrossEntropy => "cross_entropy",
            Self::ForwardKl => "forward_kl",
        }
    }

    /// Max probability shades high values dark; the divergences shade them light.
    pub fn darker_is_higher(self) -> bool {
        matches!(self, Self::MaxProb)
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown metric `{s}`")))
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub layer: usize,
    pub position: usize,
    pub top1: u32,
    pub top1_text: String,
    /// `None` where the metric is undefined (cross-entropy without a next token).
    pub value: Option<f32>,
}

/// `(L + 1) × n` cells, stored layer-major from layer 0; rendered with
/// layer 0 at the bottom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub schema: String,
    pub metric: MetricKind,
    pub darker_is_higher: bool,
    pub n_layers: usize,
    pub n_positions: usize,
    pub input_tokens: Vec<String>,
    pub cells: Vec<HeatmapCell>,
}

impl HeatmapGrid {
    pub fn n_rows(&self) -> usize {
        self.n_layers + 1
    }

    pub fn cell(&self, layer: usize, position: usize) -> &HeatmapCell {
        &self.cells[layer * self.n_positions + position]
    }

    /// Smallest and largest defined value.
    pub fn value_range(&self) -> Option<(f32, f32)> {
        self.cells.iter().filter_map(|c| c.value).fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }
}

/// Next-token targets: position `i` is scored against input `i + 1`.
pub fn next_token_gold(inputs: &[u32]) -> Vec<Option<u32>> {
    (0..inputs.len()).map(|i| inputs.get(i + 1).copied()).collect()
}

/// Fills a grid from `layer_sweep` at every position. `gold` is required for
/// cross-entropy and must define at least one position.
pub fn build_heatmap(
    model: &Model,
    trace: &HiddenStateTrace,
    inputs: &[u32],
    metric: MetricKind,
    gold: Option<&[Option<u32>]>,
    decode: impl Fn(u32) -> String,
) -> Result<HeatmapGrid> {
    let n = trace.n_positions();
    if inputs.len() != n {
        return Err(Error::InvalidInput(format!(
            "{} input tokens for a trace of {n} positions",
            inputs.len()
        )));
    }
    if let Some(g) = gold {
        if g.len() != n {
            return Err(Error::InvalidInput(format!("{} gold entries for {n} positions", g.len())));
        }
    }
    if metric == MetricKind::CrossEntropy && !gold.is_some_and(|g| g.iter().any(Option::is_some)) {
        return Err(Error::InvalidInput(
            "cross_entropy needs a gold token for at least one position".into(),
        ));
    }
    let n_layers = model.config().n_layers;
    let mut columns = Vec::with_capacity(n);
    for pos in 0..n {
        let g = gold.and_then(|g| g[pos]);
        columns.push(layer_sweep(model, trace, pos, g)?);
    }
    let mut cells = Vec::with_capacity((n_layers + 1) * n);
    for layer in 0..=n_layers {
        for (pos, column) in columns.iter().enumerate() {
            let rec = &column[layer];
            let value = match metric {
                MetricKind::MaxProb => Some(rec.max_prob),
                MetricKind::CrossEntropy => rec.cross_entropy,
                MetricKind::ForwardKl => Some(rec.forward_kl),
            };
            cells.push(HeatmapCell {
                layer,
                position: pos,
                top1: rec.top1_token,
                top1_text: decode(rec.top1_token),
                value: value.map(|v| v as f32),
            });
        }
    }
    Ok(HeatmapGrid {
        schema: HEATMAP_SCHEMA.into(),
        metric,
        darker_is_higher: metric.darker_is_higher(),
        n_layers,
        n_positions: n,
        input_tokens: inputs.iter().map(|&t| decode(t)).collect(),
        cells,
    })
}

const CELL_W: usize = 76;
const CELL_H: usize = 26;
const LEFT: usize = 64;
const TOP: usize = 40;
const BOTTOM: usize = 44;
const LIGHT: (f32, f32, f32) = (255.0, 255.0, 255.0);
const DARK: (f32, f32, f32) = (8.0, 48.0, 107.0);

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if c.is_control() => {
                let _ = write!(out, "\\u{{{:x}}}", c as u32);
            }
            c => out.push(c),
        }
    }
    out
}

/// Shade in `[0, 1]`, 1 = darkest.
fn shade(grid: &HeatmapGrid, value: f32, (lo, hi): (f32, f32)) -> f32 {
    let t = if hi > lo { (value - lo) / (hi - lo) } else { 0.0 };
    if grid.darker_is_higher {
        t
    } else {
        1.0 - t
    }
}

fn color(s: f32) -> String {
    let mix = |a: f32, b: f32| (a + (b - a) * s).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        mix(LIGHT.0, DARK.0),
        mix(LIGHT.1, DARK.1),
        mix(LIGHT.2, DARK.2)
    )
}

/// SVG 1.1 heatmap with one `rect.cell` per cell. The color scale spans the
/// grid's own min and max, which are recorded on the root element.
pub fn render_svg(grid: &HeatmapGrid) -> String {
    let rows = grid.n_rows();
    let width = LEFT + grid.n_positions * CELL_W + 8;
    let height = TOP + rows * CELL_H + BOTTOM;
    let range = grid.value_range().unwrap_or((0.0, 0.0));
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}" data-metric="{}" data-min="{:.6}" data-max="{:.6}" data-darker-is-higher="{}">"#,
        grid.metric, range.0, range.1, grid.darker_is_higher
    );
    let _ = writeln!(
        s,
        r#"<style>text{{font-family:monospace;font-size:11px}} .cell{{stroke:#ffffff;stroke-width:1}}</style>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{LEFT}" y="20">{} (scale {:.6} to {:.6}, {} = darker)</text>"#,
        grid.metric,
        range.0,
        range.1,
        if grid.darker_is_higher { "higher" } else { "lower" }
    );
    for row in 0..rows {
        let layer = rows - 1 - row;
        let y = TOP + row * CELL_H;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{layer}</text>"#,
            LEFT - 8,
            y + CELL_H / 2 + 4
        );
        for pos in 0..grid.n_positions {
            let cell = grid.cell(layer, pos);
            let x = LEFT + pos * CELL_W;
            let (fill, ink, value) = match cell.value {
                Some(v) => {
                    let sh = shade(grid, v, range);
                    let ink = if sh > 0.5 { "#ffffff" } else { "#000000" };
                    (color(sh), ink, format!("{v:.6}"))
                }
                None => ("#e0e0e0".to_string(), "#000000", "n/a".to_string()),
            };
            let label = escape(&cell.top1_text);
            let _ = writeln!(
                s,
                r#"<rect class="cell" x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="{fill}" data-layer="{layer}" data-position="{pos}"><title>layer {layer}, position {pos}: {label} ({value})</title></rect>"#
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}" xml:space="preserve">{label}</text>"#,
                x + CELL_W / 2,
                y + CELL_H / 2 + 4
            );
        }
    }
    let y = TOP + rows * CELL_H + 16;
    for (pos, tok) in grid.input_tokens.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" text-anchor="middle" xml:space="preserve">{}</text>"#,
            LEFT + pos * CELL_W + CELL_W / 2,
            escape(tok)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidInput(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn to_json<T: Serialize>(value: &T, what: &str) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::json(what, e))
}

pub fn heatmap_csv(grid: &HeatmapGrid) -> Result<String> {
    let mut w = csv_writer();
    w.write_record(["layer", "position", "input_token", "top1_id", "top1_text", "metric", "value"])?;
    for c in &grid.cells {
        w.write_record([
            c.layer.to_string(),
            c.position.to_string(),
            grid.input_tokens[c.position].clone(),
            c.top1.to_string(),
            c.top1_text.clone(),
            grid.metric.to_string(),
            opt(c.value),
        ])?;
    }
    finish(w)
}

pub fn heatmap_json(grid: &HeatmapGrid) -> Result<String> {
    to_json(grid, "heatmap")
}

pub fn parse_heatmap_json(text: &str) -> Result<HeatmapGrid> {
    serde_json::from_str(text).map_err(|e| Error::json("heatmap", e))
}

const STAT_COLUMNS: [&str; 3] = ["mean", "ci_low", "ci_high"];

fn stat_header(prefix: &str) -> impl Iterator<Item = String> + '_ {
    STAT_COLUMNS.iter().map(move |c| format!("{prefix}_{c}"))
}

fn stat_fields(s: &StatSummary) -> [String; 3] {
    [opt(s.mean), opt(s.ci_low), opt(s.ci_high)]
}

/// One row per (position, run), then one aggregate row per position.
/// Refinement columns on aggregate rows cover every scored instance.
pub fn sweep_csv(result: &SweepResult) -> Result<String> {
    let mut w = csv_writer();
    let mut header: Vec<String> = ["row", "position", "run", "n", "n_correct", "accuracy"]
        .map(String::from)
        .to_vec();
    header.extend(stat_header("accuracy"));
    header.extend(stat_header("first_correct_layer"));
    header.extend(stat_header("stabilization_layer"));
    header.extend(stat_header("depth"));
    w.write_record(&header)?;
    let blanks = |n: usize| vec![String::new(); n];
    for r in &result.runs {
        let mut row = vec![
            "run".to_string(),
            r.position.to_string(),
            r.run.to_string(),
            r.n_scored.to_string(),
            r.n_correct.to_string(),
            opt(r.accuracy),
        ];
        row.extend(blanks(12));
        w.write_record(&row)?;
    }
    for p in &result.positions {
        let mut row = vec![
            "aggregate".to_string(),
            p.position.to_string(),
            String::new(),
            p.accuracy.n.to_string(),
            String::new(),
            String::new(),
        ];
        row.extend(stat_fields(&p.accuracy));
        row.extend(stat_fields(&p.all.first_correct_layer));
        row.extend(stat_fields(&p.all.stabilization_layer));
        row.extend(stat_fields(&p.all.depth));
        w.write_record(&row)?;
    }
    finish(w)
}

/// Curve data per position and population (`all`, `answered`).
pub fn curves_csv(result: &SweepResult) -> Result<String> {
    let mut w = csv_writer();
    let mut header = vec!["position".to_string(), "population".to_string()];
    header.extend(stat_header("accuracy"));
    for m in ["first_correct_layer", "stabilization_layer", "depth"] {
        header.push(format!("{m}_n"));
        header.push(format!("{m}_n_missing"));
        header.extend(stat_header(m));
    }
    w.write_record(&header)?;
    for p in &result.positions {
        for (name, stats) in [("all", &p.all), ("answered", &p.answered)] {
            let mut row = vec![p.position.to_string(), name.to_string()];
            row.extend(stat_fields(&p.accuracy));
            for s in [&stats.first_correct_layer, &stats.stabilization_layer, &stats.depth] {
                row.push(s.n.to_string());
                row.push(s.n_missing.to_string());
                row.extend(stat_fields(s));
            }
            w.write_record(&row)?;
        }
    }
    finish(w)
}

pub fn sweep_json(result: &SweepResult) -> Result<String> {
    to_json(result, "sweep result")
}

pub fn parse_sweep_json(text: &str) -> Result<SweepResult> {
    serde_json::from_str(text).map_err(|e| Error::json("sweep result", e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTable {
    pub schema: String,
    pub candidates: Vec<u32>,
    pub rows: Vec<LayerCurvePoint>,
}

impl ProbeTable {
    pub fn new(candidates: Vec<u32>, rows: Vec<LayerCurvePoint>) -> Self {
        Self {
            schema: PROBE_SCHEMA.into(),
            candidates,
            rows,
        }
    }
}

pub fn probe_csv(table: &ProbeTable) -> Result<String> {
    let mut w = csv_writer();
    w.write_record([
        "layer",
        "probe_accuracy",
        "lens_heldout_accuracy",
        "lens_restricted_accuracy",
        "lens_unrestricted_accuracy",
        "n_examples",
        "n_heldout",
    ])?;
    for r in &table.rows {
        w.write_record([
            r.layer.to_string(),
            r.probe_accuracy.to_string(),
            r.lens_heldout_accuracy.to_string(),
            r.lens_restricted_accuracy.to_string(),
            r.lens_unrestricted_accuracy.to_string(),
            r.n_examples.to_string(),
            r.n_heldout.to_string(),
        ])?;
    }
    finish(w)
}

pub fn probe_json(table: &ProbeTable) -> Result<String> {
    to_json(table, "probe table")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(values: &[Option<f32>], metric: MetricKind) -> HeatmapGrid {
        HeatmapGrid {
            schema: HEATMAP_SCHEMA.into(),
            metric,
            darker_is_higher: metric.darker_is_higher(),
            n_layers: values.len() - 1,
            n_positions: 1,
            input_tokens: vec!["x".into()],
            cells: values
                .iter()
                .enumerate()
                .map(|(l, &value)| HeatmapCell {
                    layer: l,
                    position: 0,
                    top1: 7,
                    top1_text: "<&>".into(),
                    value,
                })
                .collect(),
        }
    }

    #[test]
    fn polarity_per_metric() {
        assert!(MetricKind::MaxProb.darker_is_higher());
        assert!(!MetricKind::CrossEntropy.darker_is_higher());
        assert!(!MetricKind::ForwardKl.darker_is_higher());
        let g = grid(&[Some(0.0), Some(1.0)], MetricKind::MaxProb);
        assert_eq!(shade(&g, 1.0, (0.0, 1.0)), 1.0);
        let g = grid(&[Some(0.0), Some(1.0)], MetricKind::ForwardKl);
        assert_eq!(shade(&g, 1.0, (0.0, 1.0)), 0.0);
        assert_eq!(color(0.0), "#ffffff");
        assert_eq!(color(1.0), "#08306b");
    }

    #[test]
    fn single_cell_svg() {
        let svg = render_svg(&grid(&[Some(0.5)], MetricKind::MaxProb));
        assert_eq!(svg.matches(r#"class="cell""#).count(), 1);
        assert!(svg.contains("&lt;&amp;&gt;"));
        assert!(!svg.contains("<&>"));
    }

    #[test]
    fn layer_zero_is_drawn_at_the_bottom() {
        let svg = render_svg(&grid(&[Some(0.0), Some(1.0), None], MetricKind::MaxProb));
        let y_of = |layer: usize| {
            let tag = format!(r#"data-layer="{layer}""#);
            let line = svg.lines().find(|l| l.contains(&tag)).unwrap();
            let y = line.split(r#" y=""#).nth(1).unwrap();
            y[..y.find('"').unwrap()].parse::<usize>().unwrap()
        };
        assert!(y_of(0) > y_of(1) && y_of(1) > y_of(2));
        assert!(svg.contains("n/a"));
    }

    #[test]
    fn metric_names_parse() {
        for m in MetricKind::ALL {
            assert_eq!(m.as_str().parse::<MetricKind>().unwrap(), m);
        }
        assert!("entropy".parse::<MetricKind>().is_err());
    }
}
