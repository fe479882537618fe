//! Deterministic SVG charts: signed importance bars, force plots, hexbin
//! scatter, residual histograms and training loss curves.
//!
//! Every coordinate is printed with two decimals so the same spec always
//! produces the same bytes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use yieldbench::explain::{Contribution, ForcePlot, ImpactSign, ImportanceEntry};
use yieldbench::metrics::HexBin;
use yieldbench::neural::EpochRecord;

pub const DEFAULT_WIDTH: f64 = 720.0;
pub const DEFAULT_HEIGHT: f64 = 480.0;

const POSITIVE: &str = "#d62728";
const NEGATIVE: &str = "#1f77b4";
const NEUTRAL: &str = "#8c8c8c";
const INK: &str = "#333333";
const FORCE_LABELS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum PlotData {
    ImportanceBar(Vec<ImportanceEntry>),
    Force(ForcePlot),
    Hexbin { hex_size: f64, bins: Vec<HexBin> },
    ResidualHist { residuals: Vec<f64>, bins: usize },
    LossCurve(Vec<EpochRecord>),
}

impl PlotData {
    pub fn kind(&self) -> &'static str {
        match self {
            PlotData::ImportanceBar(_) => "importance_bar",
            PlotData::Force(_) => "force",
            PlotData::Hexbin { .. } => "hexbin",
            PlotData::ResidualHist { .. } => "residual_hist",
            PlotData::LossCurve(_) => "loss_curve",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub title: String,
    pub width: f64,
    pub height: f64,
    #[serde(flatten)]
    pub data: PlotData,
}

impl PlotSpec {
    pub fn new(title: impl Into<String>, data: PlotData) -> Self {
        PlotSpec {
            title: title.into(),
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlotError(pub String);

impl std::fmt::Display for PlotError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "cannot draw plot: {}", self.0)
    }
}

impl std::error::Error for PlotError {}

fn fail<T>(msg: impl Into<String>) -> Result<T, PlotError> {
    Err(PlotError(msg.into()))
}

fn num(v: f64) -> String {
    let v = if v.abs() < 0.005 { 0.0 } else { v };
    format!("{v:.2}")
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Linear map from `[lo, hi]` onto `[a, b]`; a degenerate domain maps to
/// the middle of the range.
#[derive(Clone, Copy)]
struct Scale {
    lo: f64,
    hi: f64,
    a: f64,
    b: f64,
}

impl Scale {
    fn new(lo: f64, hi: f64, a: f64, b: f64) -> Self {
        Scale { lo, hi, a, b }
    }

    fn at(&self, v: f64) -> f64 {
        if self.hi > self.lo {
            self.a + (v - self.lo) / (self.hi - self.lo) * (self.b - self.a)
        } else {
            (self.a + self.b) / 2.0
        }
    }
}

fn bounds(values: impl IntoIterator<Item = f64>) -> Option<(f64, f64)> {
    let mut it = values.into_iter().filter(|v| v.is_finite());
    let first = it.next()?;
    Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
}

struct Svg {
    buf: String,
}

impl Svg {
    fn open(spec: &PlotSpec) -> Self {
        let mut buf = String::new();
        let (w, h) = (num(spec.width), num(spec.height));
        let _ = writeln!(
            buf,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11" data-kind="{}">"#,
            spec.data.kind()
        );
        let _ = writeln!(
            buf,
            r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#
        );
        let mut svg = Svg { buf };
        svg.text(spec.width / 2.0, 20.0, "middle", &spec.title, "title");
        svg
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str, class: &str) {
        let _ = writeln!(
            self.buf,
            r#"<text class="{class}" x="{}" y="{}" text-anchor="{anchor}" fill="{INK}">{}</text>"#,
            num(x),
            num(y),
            escape(s)
        );
    }

    fn vertical_text(&mut self, x: f64, y: f64, s: &str, class: &str) {
        let _ = writeln!(
            self.buf,
            r#"<text class="{class}" x="{x}" y="{y}" text-anchor="middle" fill="{INK}" transform="rotate(-90 {x} {y})">{}</text>"#,
            escape(s),
            x = num(x),
            y = num(y)
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, class: &str) {
        let _ = writeln!(
            self.buf,
            r#"<rect class="{class}" x="{}" y="{}" width="{}" height="{}" fill="{fill}"/>"#,
            num(x),
            num(y),
            num(w.max(0.0)),
            num(h.max(0.0))
        );
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, class: &str) {
        let _ = writeln!(
            self.buf,
            r#"<line class="{class}" x1="{}" y1="{}" x2="{}" y2="{}" stroke="{stroke}" stroke-width="1"/>"#,
            num(x1),
            num(y1),
            num(x2),
            num(y2)
        );
    }

    fn polygon(&mut self, pts: &[(f64, f64)], fill: &str, opacity: f64, class: &str) {
        let p: Vec<String> = pts
            .iter()
            .map(|(x, y)| format!("{},{}", num(*x), num(*y)))
            .collect();
        let _ = writeln!(
            self.buf,
            r#"<polygon class="{class}" points="{}" fill="{fill}" fill-opacity="{}"/>"#,
            p.join(" "),
            num(opacity)
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str, class: &str) {
        let p: Vec<String> = pts
            .iter()
            .map(|(x, y)| format!("{},{}", num(*x), num(*y)))
            .collect();
        let _ = writeln!(
            self.buf,
            r#"<polyline class="{class}" points="{}" fill="none" stroke="{stroke}" stroke-width="1.5"/>"#,
            p.join(" ")
        );
    }

    fn finish(mut self) -> String {
        self.buf.push_str("</svg>\n");
        self.buf
    }
}

struct Frame {
    left: f64,
    right: f64,
    top: f64,
    bottom: f64,
}

fn frame(spec: &PlotSpec, left: f64) -> Result<Frame, PlotError> {
    let f = Frame {
        left,
        right: spec.width - 30.0,
        top: 40.0,
        bottom: spec.height - 45.0,
    };
    if !(f.right > f.left && f.bottom > f.top) {
        return fail(format!(
            "canvas {}x{} is too small",
            spec.width, spec.height
        ));
    }
    Ok(f)
}

fn tick(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e9 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn axes(svg: &mut Svg, f: &Frame, x: Scale, y: Scale, xlabel: &str, ylabel: &str) {
    svg.line(f.left, f.bottom, f.right, f.bottom, INK, "axis");
    svg.line(f.left, f.top, f.left, f.bottom, INK, "axis");
    for (v, anchor) in [(x.lo, "start"), (x.hi, "end")] {
        svg.text(x.at(v), f.bottom + 14.0, anchor, &tick(v), "tick");
    }
    for v in [y.lo, y.hi] {
        svg.text(f.left - 4.0, y.at(v) + 4.0, "end", &tick(v), "tick");
    }
    svg.text(
        (f.left + f.right) / 2.0,
        f.bottom + 32.0,
        "middle",
        xlabel,
        "label",
    );
    svg.vertical_text(16.0, (f.top + f.bottom) / 2.0, ylabel, "label");
}

pub fn emit_svg(spec: &PlotSpec) -> Result<String, PlotError> {
    if !(spec.width.is_finite() && spec.height.is_finite()) {
        return fail("dimensions must be finite");
    }
    match &spec.data {
        PlotData::ImportanceBar(entries) => importance_bar(spec, entries),
        PlotData::Force(force) => force_plot(spec, force),
        PlotData::Hexbin { hex_size, bins } => hexbin(spec, *hex_size, bins),
        PlotData::ResidualHist { residuals, bins } => residual_hist(spec, residuals, *bins),
        PlotData::LossCurve(history) => loss_curve(spec, history),
    }
}

fn sign_color(sign: ImpactSign) -> &'static str {
    match sign {
        ImpactSign::Positive => POSITIVE,
        ImpactSign::Negative => NEGATIVE,
        ImpactSign::Undefined => NEUTRAL,
    }
}

fn importance_bar(spec: &PlotSpec, entries: &[ImportanceEntry]) -> Result<String, PlotError> {
    if entries.is_empty() {
        return fail("importance ranking is empty");
    }
    let mut rows: Vec<&ImportanceEntry> = entries.iter().collect();
    rows.sort_by(|a, b| {
        b.mean_abs_phi
            .total_cmp(&a.mean_abs_phi)
            .then(a.index.cmp(&b.index))
    });
    let f = frame(spec, 150.0)?;
    let max = rows.iter().map(|e| e.mean_abs_phi).fold(0.0, f64::max);
    let x = Scale::new(0.0, max, f.left, f.right - 60.0);
    let slot = (f.bottom - f.top) / rows.len() as f64;
    let mut svg = Svg::open(spec);
    for (i, e) in rows.iter().enumerate() {
        let y = f.top + i as f64 * slot;
        let w = if max > 0.0 {
            x.at(e.mean_abs_phi) - f.left
        } else {
            0.0
        };
        svg.rect(
            f.left,
            y + slot * 0.15,
            w,
            slot * 0.7,
            sign_color(e.sign),
            "bar",
        );
        svg.text(
            f.left - 6.0,
            y + slot / 2.0 + 4.0,
            "end",
            &e.feature,
            "feature",
        );
        svg.text(
            f.left + w + 4.0,
            y + slot / 2.0 + 4.0,
            "start",
            &format!("{:.4}", e.mean_abs_phi),
            "value",
        );
    }
    svg.line(f.left, f.top, f.left, f.bottom, INK, "axis");
    svg.text(
        (f.left + f.right) / 2.0,
        f.bottom + 28.0,
        "middle",
        "mean |SHAP value|",
        "label",
    );
    Ok(svg.finish())
}

fn force_plot(spec: &PlotSpec, force: &ForcePlot) -> Result<String, PlotError> {
    if force.contributions.is_empty() {
        return fail("force plot has no features");
    }
    if !(force.base_value.is_finite() && force.output.is_finite()) {
        return fail("force plot values must be finite");
    }
    let pos: Vec<_> = force.contributions.iter().filter(|c| c.phi > 0.0).collect();
    let neg: Vec<_> = force.contributions.iter().filter(|c| c.phi < 0.0).collect();
    let push_up: f64 = pos.iter().map(|c| c.phi).sum();
    let push_down: f64 = neg.iter().map(|c| -c.phi).sum();
    // Positive segments end at the output from the left, negative ones
    // start there and extend to the right; the base lies in between.
    let lo = (force.output - push_up).min(force.base_value);
    let hi = (force.output + push_down).max(force.base_value);
    let pad = ((hi - lo) * 0.05).max(1e-9);
    let f = frame(spec, 30.0)?;
    let x = Scale::new(lo - pad, hi + pad, f.left, f.right);
    let mid = (f.top + f.bottom) / 2.0;
    let band = 26.0;
    let mut svg = Svg::open(spec);
    svg.line(f.left, mid + band, f.right, mid + band, INK, "axis");

    let mut right = force.output;
    for c in &pos {
        let left = right - c.phi;
        segment(&mut svg, x.at(left), x.at(right), mid, band, POSITIVE, true);
        right = left;
    }
    let mut left = force.output;
    for c in &neg {
        let next = left - c.phi;
        segment(&mut svg, x.at(left), x.at(next), mid, band, NEGATIVE, false);
        left = next;
    }
    // The largest contributors on each side get a label on its own row,
    // joined to the segment by a leader line. Positive labels extend left
    // and negative ones right, so the two sides never collide.
    let mut right = force.output;
    for (i, c) in pos.iter().enumerate() {
        if i < FORCE_LABELS {
            leader(
                &mut svg,
                x.at(right - c.phi / 2.0),
                mid + band / 2.0,
                i,
                "end",
                c,
            );
        }
        right -= c.phi;
    }
    let mut left = force.output;
    for (i, c) in neg.iter().enumerate() {
        if i < FORCE_LABELS {
            leader(
                &mut svg,
                x.at(left - c.phi / 2.0),
                mid + band / 2.0,
                i,
                "start",
                c,
            );
        }
        left -= c.phi;
    }

    let bx = x.at(force.base_value);
    svg.line(bx, mid - band - 10.0, bx, mid + band, INK, "base");
    svg.text(
        bx,
        mid - band - 14.0,
        "middle",
        &format!("base value {:.3}", force.base_value),
        "base-label",
    );
    if !pos.is_empty() || !neg.is_empty() {
        let ox = x.at(force.output);
        svg.line(ox, mid - band - 24.0, ox, mid + band, INK, "output");
        svg.text(
            ox,
            mid - band - 28.0,
            "middle",
            &format!("output {:.3}", force.output),
            "output-label",
        );
    }
    Ok(svg.finish())
}

fn leader(svg: &mut Svg, cx: f64, y0: f64, row: usize, anchor: &str, c: &Contribution) {
    let y = y0 + 34.0 + 14.0 * row as f64;
    let dx = if anchor == "end" { -4.0 } else { 4.0 };
    svg.line(cx, y0, cx, y - 4.0, NEUTRAL, "leader");
    svg.text(
        cx + dx,
        y,
        anchor,
        &format!("{} = {:.3} ({:+.3})", c.feature, c.value, c.phi),
        "contribution",
    );
}

/// Arrow-shaped segment pointing right (positive) or left (negative).
fn segment(svg: &mut Svg, x0: f64, x1: f64, mid: f64, band: f64, fill: &str, rightward: bool) {
    let (a, b) = (x0.min(x1), x0.max(x1));
    let tip = ((b - a) * 0.4).min(6.0);
    let pts = if rightward {
        vec![
            (a, mid - band / 2.0),
            (b - tip, mid - band / 2.0),
            (b, mid),
            (b - tip, mid + band / 2.0),
            (a, mid + band / 2.0),
            (a + tip, mid),
        ]
    } else {
        vec![
            (b, mid - band / 2.0),
            (a + tip, mid - band / 2.0),
            (a, mid),
            (a + tip, mid + band / 2.0),
            (b, mid + band / 2.0),
            (b - tip, mid),
        ]
    };
    svg.polygon(&pts, fill, 1.0, "segment");
}

fn hexbin(spec: &PlotSpec, hex_size: f64, bins: &[HexBin]) -> Result<String, PlotError> {
    if bins.is_empty() {
        return fail("hexbin has no cells");
    }
    if !(hex_size > 0.0 && hex_size.is_finite()) {
        return fail("hex size must be positive");
    }
    let (lo, hi) = bounds(bins.iter().flat_map(|b| [b.x, b.y]))
        .ok_or_else(|| PlotError("hexbin centers are not finite".into()))?;
    let (lo, hi) = (lo - hex_size, hi + hex_size);
    let f = frame(spec, 70.0)?;
    // Equal aspect so hexagons stay regular.
    let side = (f.right - f.left).min(f.bottom - f.top);
    let x = Scale::new(lo, hi, f.left, f.left + side);
    let y = Scale::new(lo, hi, f.top + side, f.top);
    let max = bins.iter().map(|b| b.count).max().unwrap_or(1).max(1) as f64;
    let mut svg = Svg::open(spec);
    let unit = side / (hi - lo);
    for b in bins {
        let pts: Vec<(f64, f64)> = (0..6)
            .map(|k| {
                let ang = std::f64::consts::PI / 180.0 * (60.0 * k as f64 - 30.0);
                (
                    x.at(b.x) + hex_size * unit * ang.cos(),
                    y.at(b.y) - hex_size * unit * ang.sin(),
                )
            })
            .collect();
        svg.polygon(&pts, NEGATIVE, 0.15 + 0.85 * b.count as f64 / max, "hex");
    }
    svg.line(x.at(lo), y.at(lo), x.at(hi), y.at(hi), NEUTRAL, "identity");
    let fr = Frame {
        left: f.left,
        right: f.left + side,
        top: f.top,
        bottom: f.top + side,
    };
    axes(&mut svg, &fr, x, y, "observed yield", "predicted");
    svg.text(
        fr.right + 8.0,
        f.top + 10.0,
        "start",
        &format!("max count {}", max as usize),
        "legend",
    );
    Ok(svg.finish())
}

fn residual_hist(spec: &PlotSpec, residuals: &[f64], bins: usize) -> Result<String, PlotError> {
    if residuals.is_empty() {
        return fail("no residuals");
    }
    if bins == 0 {
        return fail("histogram needs at least one bin");
    }
    let (lo, hi) = bounds(residuals.iter().copied())
        .ok_or_else(|| PlotError("residuals are not finite".into()))?;
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let mut counts = vec![0usize; bins];
    for r in residuals.iter().filter(|r| r.is_finite()) {
        let k = (((r - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let f = frame(spec, 60.0)?;
    let top = *counts.iter().max().unwrap_or(&1) as f64;
    let x = Scale::new(lo, lo + width * bins as f64, f.left, f.right);
    let y = Scale::new(0.0, top, f.bottom, f.top);
    let mut svg = Svg::open(spec);
    for (k, &c) in counts.iter().enumerate() {
        let x0 = x.at(lo + width * k as f64);
        let x1 = x.at(lo + width * (k + 1) as f64);
        svg.rect(
            x0 + 0.5,
            y.at(c as f64),
            x1 - x0 - 1.0,
            f.bottom - y.at(c as f64),
            NEGATIVE,
            "bin",
        );
    }
    axes(
        &mut svg,
        &f,
        x,
        y,
        "residual (observed - predicted)",
        "count",
    );
    Ok(svg.finish())
}

fn loss_curve(spec: &PlotSpec, history: &[EpochRecord]) -> Result<String, PlotError> {
    if history.is_empty() {
        return fail("training history is empty");
    }
    let losses = history
        .iter()
        .flat_map(|e| [Some(e.train_loss), e.val_loss])
        .flatten();
    let (lo, hi) = bounds(losses).ok_or_else(|| PlotError("losses are not finite".into()))?;
    let first = history.first().map_or(0, |e| e.epoch) as f64;
    let last = history.last().map_or(0, |e| e.epoch) as f64;
    let f = frame(spec, 70.0)?;
    let x = Scale::new(first, last, f.left, f.right);
    let y = Scale::new(lo.min(0.0), hi, f.bottom, f.top);
    let mut svg = Svg::open(spec);
    let train: Vec<(f64, f64)> = history
        .iter()
        .map(|e| (x.at(e.epoch as f64), y.at(e.train_loss)))
        .collect();
    svg.polyline(&train, NEGATIVE, "train");
    let val: Vec<(f64, f64)> = history
        .iter()
        .filter_map(|e| e.val_loss.map(|v| (x.at(e.epoch as f64), y.at(v))))
        .collect();
    if !val.is_empty() {
        svg.polyline(&val, POSITIVE, "validation");
    }
    axes(&mut svg, &f, x, y, "epoch", "loss");
    svg.text(
        f.right,
        f.top + 12.0,
        "end",
        "train (blue), validation (red)",
        "legend",
    );
    Ok(svg.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(i: usize, v: f64, sign: ImpactSign) -> ImportanceEntry {
        ImportanceEntry {
            feature: format!("f{i}"),
            index: i,
            mean_abs_phi: v,
            sign,
        }
    }

    #[test]
    fn bars_colored_by_sign() {
        let spec = PlotSpec::new(
            "imp",
            PlotData::ImportanceBar(vec![
                entry(0, 2.0, ImpactSign::Positive),
                entry(1, 1.0, ImpactSign::Negative),
            ]),
        );
        let svg = emit_svg(&spec).unwrap();
        let bars: Vec<&str> = svg
            .lines()
            .filter(|l| l.contains(r#"class="bar""#))
            .collect();
        assert_eq!(bars.len(), 2);
        assert!(bars[0].contains(POSITIVE));
        assert!(bars[1].contains(NEGATIVE));
    }

    #[test]
    fn zero_force_plot_has_only_base() {
        let force = ForcePlot {
            base_value: 6.0,
            output: 6.0,
            contributions: vec![Contribution {
                feature: "a".into(),
                value: 1.0,
                phi: 0.0,
                positive: true,
            }],
        };
        let svg = emit_svg(&PlotSpec::new("f", PlotData::Force(force))).unwrap();
        assert!(svg.contains(r#"class="base""#));
        assert!(!svg.contains(r#"class="output""#));
        assert!(!svg.contains(r#"class="segment""#));
    }

    #[test]
    fn empty_payloads_fail() {
        for data in [
            PlotData::ImportanceBar(vec![]),
            PlotData::Hexbin {
                hex_size: 1.0,
                bins: vec![],
            },
            PlotData::ResidualHist {
                residuals: vec![],
                bins: 10,
            },
            PlotData::LossCurve(vec![]),
            PlotData::Force(ForcePlot {
                base_value: 0.0,
                output: 0.0,
                contributions: vec![],
            }),
        ] {
            assert!(emit_svg(&PlotSpec::new("x", data)).is_err());
        }
    }

    #[test]
    fn text_is_escaped() {
        let spec = PlotSpec::new(
            "a<b & c",
            PlotData::ResidualHist {
                residuals: vec![0.0, 1.0],
                bins: 2,
            },
        );
        let svg = emit_svg(&spec).unwrap();
        assert!(svg.contains("a&lt;b &amp; c"));
    }

    #[test]
    fn negative_zero_prints_plainly() {
        assert_eq!(num(-0.001), "0.00");
        assert_eq!(num(-1.234), "-1.23");
    }
}
