//! Deterministic SVG 1.1 plots: score series with overlays, CUSUM decision
//! functions, and ranked-term bar charts.
//!
//! Output depends only on the inputs and style: coordinates are printed with
//! two decimals and no timestamps or generator metadata are embedded. Long
//! series are reduced to per-pixel-column min/max pairs before drawing.

use std::fmt::Write as _;

use crate::detect::Direction;
use crate::report::TermRanking;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Colors {
    pub positive: String,
    pub negative: String,
    pub offline: String,
}

impl Default for Colors {
    fn default() -> Self {
        Colors {
            positive: "#e6b400".to_owned(),
            negative: "#1f5fbf".to_owned(),
            offline: "#d62728".to_owned(),
        }
    }
}

impl Colors {
    /// Parse `pos,neg,offline`.
    pub fn parse(spec: &str) -> Result<Colors, String> {
        let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
        match parts.as_slice() {
            [p, n, o] if [p, n, o].iter().all(|c| valid_color(c)) => Ok(Colors {
                positive: (*p).to_owned(),
                negative: (*n).to_owned(),
                offline: (*o).to_owned(),
            }),
            _ => Err(format!(
                "expected three colors `pos,neg,offline`, got `{spec}`"
            )),
        }
    }
}

fn valid_color(c: &str) -> bool {
    !c.is_empty() && c.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '#')
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvgStyle {
    pub width: u32,
    pub height: u32,
    pub colors: Colors,
    pub series_color: String,
    pub average_color: String,
}

impl Default for SvgStyle {
    fn default() -> Self {
        SvgStyle {
            width: 960,
            height: 360,
            colors: Colors::default(),
            series_color: "#9a9a9a".to_owned(),
            average_color: "#111111".to_owned(),
        }
    }
}

/// Vertical marker at a 1-based sample index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Marker {
    Event { index: u64, direction: Direction },
    Offline { index: u64 },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeriesOverlays<'a> {
    pub moving_average: Option<&'a [Option<f64>]>,
    pub markers: Vec<Marker>,
}

const MARGIN_LEFT: f64 = 56.0;
const MARGIN_RIGHT: f64 = 16.0;
const MARGIN_TOP: f64 = 32.0;
const MARGIN_BOTTOM: f64 = 28.0;

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

fn num(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".to_owned()
    } else {
        s
    }
}

struct Frame {
    width: f64,
    height: f64,
    n: usize,
    lo: f64,
    hi: f64,
}

impl Frame {
    fn new(style: &SvgStyle, n: usize, lo: f64, hi: f64) -> Frame {
        let (lo, hi) = if hi > lo {
            let pad = (hi - lo) * 0.05;
            (lo - pad, hi + pad)
        } else {
            (lo - 1.0, hi + 1.0)
        };
        Frame {
            width: f64::from(style.width),
            height: f64::from(style.height),
            n,
            lo,
            hi,
        }
    }

    fn plot_w(&self) -> f64 {
        self.width - MARGIN_LEFT - MARGIN_RIGHT
    }

    fn plot_h(&self) -> f64 {
        self.height - MARGIN_TOP - MARGIN_BOTTOM
    }

    /// x for a 0-based sample position.
    fn x(&self, pos: f64) -> f64 {
        if self.n <= 1 {
            MARGIN_LEFT + self.plot_w() / 2.0
        } else {
            MARGIN_LEFT + pos / (self.n - 1) as f64 * self.plot_w()
        }
    }

    fn y(&self, v: f64) -> f64 {
        MARGIN_TOP + (self.hi - v) / (self.hi - self.lo) * self.plot_h()
    }

    fn columns(&self) -> usize {
        self.plot_w().max(1.0) as usize
    }
}

/// Points of a (possibly gappy) series, reduced to at most two points per
/// pixel column. Gaps split the output into separate runs.
fn reduce(
    values: impl Iterator<Item = Option<f64>>,
    n: usize,
    columns: usize,
) -> Vec<Vec<(usize, f64)>> {
    let mut runs: Vec<Vec<(usize, f64)>> = vec![Vec::new()];
    if n <= columns * 2 {
        for (i, v) in values.enumerate() {
            match v {
                Some(v) => runs.last_mut().expect("non-empty").push((i, v)),
                None if !runs.last().expect("non-empty").is_empty() => runs.push(Vec::new()),
                None => {}
            }
        }
    } else {
        let mut bucket: Option<(usize, (usize, f64), (usize, f64))> = None;
        let flush = |runs: &mut Vec<Vec<(usize, f64)>>, b: (usize, (usize, f64), (usize, f64))| {
            let (_, a, z) = b;
            let run = runs.last_mut().expect("non-empty");
            let (first, second) = if a.0 <= z.0 { (a, z) } else { (z, a) };
            run.push(first);
            if second.0 != first.0 {
                run.push(second);
            }
        };
        for (i, v) in values.enumerate() {
            let col = i * columns / n;
            let Some(v) = v else {
                if let Some(b) = bucket.take() {
                    flush(&mut runs, b);
                }
                if !runs.last().expect("non-empty").is_empty() {
                    runs.push(Vec::new());
                }
                continue;
            };
            match &mut bucket {
                Some((c, lo, hi)) if *c == col => {
                    if v < lo.1 {
                        *lo = (i, v);
                    }
                    if v > hi.1 {
                        *hi = (i, v);
                    }
                }
                _ => {
                    if let Some(b) = bucket.take() {
                        flush(&mut runs, b);
                    }
                    bucket = Some((col, (i, v), (i, v)));
                }
            }
        }
        if let Some(b) = bucket {
            flush(&mut runs, b);
        }
    }
    runs.retain(|r| !r.is_empty());
    runs
}

fn polyline(out: &mut String, frame: &Frame, run: &[(usize, f64)], color: &str, width: f64) {
    let mut pts = String::new();
    for (k, &(i, v)) in run.iter().enumerate() {
        if k > 0 {
            pts.push(' ');
        }
        let _ = write!(pts, "{},{}", num(frame.x(i as f64)), num(frame.y(v)));
    }
    let _ = writeln!(
        out,
        r#"<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{pts}"/>"#
    );
}

fn header(out: &mut String, style: &SvgStyle, title: &str) {
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = style.width,
        h = style.height
    );
    let _ = writeln!(
        out,
        r##"<rect x="0" y="0" width="{}" height="{}" fill="#ffffff"/>"##,
        style.width, style.height
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="14">{}</text>"#,
        num(MARGIN_LEFT),
        escape(title)
    );
}

fn axes(out: &mut String, frame: &Frame) {
    let _ = writeln!(
        out,
        r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#444444" stroke-width="1"/>"##,
        num(MARGIN_LEFT),
        num(MARGIN_TOP),
        num(frame.plot_w()),
        num(frame.plot_h())
    );
    if frame.lo < 0.0 && frame.hi > 0.0 {
        let y0 = frame.y(0.0);
        let _ = writeln!(
            out,
            r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#cccccc" stroke-width="1"/>"##,
            num(MARGIN_LEFT),
            num(y0),
            num(MARGIN_LEFT + frame.plot_w()),
            num(y0)
        );
    }
    for v in [frame.lo, frame.hi] {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="end">{}</text>"#,
            num(MARGIN_LEFT - 4.0),
            num(frame.y(v) + 4.0),
            crate::report::format_float((v * 100.0).round() / 100.0)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10">1</text>"#,
        num(MARGIN_LEFT),
        num(frame.height - 8.0)
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="end">{}</text>"#,
        num(MARGIN_LEFT + frame.plot_w()),
        num(frame.height - 8.0),
        frame.n
    );
}

fn vline(out: &mut String, frame: &Frame, index: u64, color: &str, dash: bool) {
    let pos = (index.max(1) - 1) as f64;
    let x = num(frame.x(pos.min(frame.n.saturating_sub(1) as f64)));
    let dash = if dash {
        r#" stroke-dasharray="4,3""#
    } else {
        ""
    };
    let _ = writeln!(
        out,
        r#"<line x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="{color}" stroke-width="1.5"{dash}/>"#,
        num(MARGIN_TOP),
        num(MARGIN_TOP + frame.plot_h())
    );
}

fn markers(out: &mut String, frame: &Frame, style: &SvgStyle, markers: &[Marker]) {
    for m in markers {
        match *m {
            Marker::Event { index, direction } => {
                let color = match direction {
                    Direction::Positive => &style.colors.positive,
                    Direction::Negative => &style.colors.negative,
                };
                vline(out, frame, index, color, false);
            }
            Marker::Offline { index } => vline(out, frame, index, &style.colors.offline, true),
        }
    }
}

/// Score series with optional moving average and change markers.
pub fn render_series(
    values: &[f64],
    overlays: &SeriesOverlays<'_>,
    style: &SvgStyle,
    title: &str,
) -> String {
    let ma_values = overlays.moving_average.unwrap_or(&[]);
    let (lo, hi) = values
        .iter()
        .copied()
        .chain(ma_values.iter().flatten().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
    let frame = Frame::new(style, values.len(), lo, hi);

    let mut out = String::new();
    header(&mut out, style, title);
    axes(&mut out, &frame);
    for run in reduce(
        values.iter().map(|&v| Some(v)),
        values.len(),
        frame.columns(),
    ) {
        polyline(&mut out, &frame, &run, &style.series_color, 1.0);
    }
    if let Some(ma) = overlays.moving_average {
        for run in reduce(ma.iter().copied(), ma.len(), frame.columns()) {
            polyline(&mut out, &frame, &run, &style.average_color, 1.5);
        }
    }
    markers(&mut out, &frame, style, &overlays.markers);
    out.push_str("</svg>\n");
    out
}

/// Both decision functions `g⁺` (positive color) and `g⁻` (negative color)
/// against the threshold `h`, with alarm markers.
pub fn render_cusum(
    decisions: &[(f64, f64)],
    h: f64,
    marks: &[Marker],
    style: &SvgStyle,
    title: &str,
) -> String {
    let hi = decisions.iter().fold(h, |m, &(p, n)| m.max(p).max(n));
    let frame = Frame::new(style, decisions.len(), 0.0, hi);
    let mut out = String::new();
    header(&mut out, style, title);
    axes(&mut out, &frame);
    let yh = num(frame.y(h));
    let _ = writeln!(
        out,
        r##"<line x1="{}" y1="{yh}" x2="{}" y2="{yh}" stroke="#888888" stroke-width="1" stroke-dasharray="2,2"/>"##,
        num(MARGIN_LEFT),
        num(MARGIN_LEFT + frame.plot_w())
    );
    let n = decisions.len();
    for run in reduce(decisions.iter().map(|d| Some(d.0)), n, frame.columns()) {
        polyline(&mut out, &frame, &run, &style.colors.positive, 1.0);
    }
    for run in reduce(decisions.iter().map(|d| Some(d.1)), n, frame.columns()) {
        polyline(&mut out, &frame, &run, &style.colors.negative, 1.0);
    }
    markers(&mut out, &frame, style, marks);
    out.push_str("</svg>\n");
    out
}

/// Horizontal bars, one per ranked term, longest first.
pub fn render_bar_chart(
    ranking: &TermRanking,
    style: &SvgStyle,
    color: &str,
    title: &str,
) -> String {
    const ROW: f64 = 18.0;
    const LABEL_W: f64 = 140.0;
    let rows = ranking.terms.len().max(1) as f64;
    let height = (MARGIN_TOP + rows * ROW + MARGIN_BOTTOM).round() as u32;
    let style = SvgStyle {
        height,
        ..style.clone()
    };
    let max = ranking.terms.iter().map(|t| t.weight).fold(0.0, f64::max);
    let bar_space = f64::from(style.width) - LABEL_W - MARGIN_RIGHT - 80.0;

    let mut out = String::new();
    header(&mut out, &style, title);
    if ranking.terms.is_empty() {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">no distinctive terms</text>"#,
            num(LABEL_W),
            num(MARGIN_TOP + ROW * 0.7)
        );
    }
    for (i, t) in ranking.terms.iter().enumerate() {
        let y = MARGIN_TOP + i as f64 * ROW;
        let w = if max > 0.0 {
            t.weight / max * bar_space
        } else {
            0.0
        };
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="end">{}</text>"#,
            num(LABEL_W - 6.0),
            num(y + ROW * 0.7),
            escape(&t.term)
        );
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{color}"/>"#,
            num(LABEL_W),
            num(y + 2.0),
            num(w),
            num(ROW - 4.0)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10">{} ({})</text>"#,
            num(LABEL_W + w + 4.0),
            num(y + ROW * 0.7),
            crate::report::format_float(t.weight),
            t.count
        );
    }
    out.push_str("</svg>\n");
    out
}
