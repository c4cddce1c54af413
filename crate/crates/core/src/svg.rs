//! Minimal self-contained SVG charts: log-x line plots with error bands and
//! overlaid histograms. Output is deterministic text for fixed input.

use std::fmt::Write as _;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 450.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 210.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 55.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

#[derive(Debug, Clone)]
pub struct LineSeries {
    pub label: String,
    /// `(x, y)` with `x > 0`.
    pub points: Vec<(f64, f64)>,
    /// Half-width of the band drawn around each point.
    pub band: Option<Vec<f64>>,
    pub dashed: bool,
}

#[derive(Debug, Clone)]
pub struct HistSeries {
    pub label: String,
    pub values: Vec<f64>,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    log_x: bool,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let (a, b, v) = if self.log_x {
            (self.x0.log10(), self.x1.log10(), x.log10())
        } else {
            (self.x0, self.x1, x)
        };
        let span = if b > a { b - a } else { 1.0 };
        MARGIN_LEFT + (v - a) / span * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let span = if self.y1 > self.y0 {
            self.y1 - self.y0
        } else {
            1.0
        };
        HEIGHT - MARGIN_BOTTOM - (y - self.y0) / span * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        format!("{v:.0e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Roughly five round ticks covering `[lo, hi]`.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn linear_ticks(lo: f64, hi: f64) -> Vec<f64> {
    // Negated so that NaN bounds also take the degenerate path.
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut ticks = Vec::new();
    let mut v = (lo / step).ceil() * step;
    while v <= hi + step * 1e-9 {
        ticks.push(if v.abs() < step * 1e-9 { 0.0 } else { v });
        v += step;
    }
    ticks
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        escape(title)
    );
}

fn axes(
    out: &mut String,
    f: &Frame,
    x_ticks: &[f64],
    y_ticks: &[f64],
    x_label: &str,
    y_label: &str,
) {
    let (left, right) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let (top, bottom) = (MARGIN_TOP, HEIGHT - MARGIN_BOTTOM);
    let _ = writeln!(
        out,
        r#"<rect x="{left}" y="{top}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        right - left,
        bottom - top
    );
    for &x in x_ticks {
        let px = f.px(x);
        let _ = writeln!(
            out,
            r##"<line x1="{px:.1}" y1="{top}" x2="{px:.1}" y2="{bottom}" stroke="#e0e0e0"/><text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"##,
            bottom + 16.0,
            fmt_tick(x)
        );
    }
    for &y in y_ticks {
        let py = f.py(y);
        let _ = writeln!(
            out,
            r##"<line x1="{left}" y1="{py:.1}" x2="{right}" y2="{py:.1}" stroke="#e0e0e0"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
            left - 6.0,
            py + 4.0,
            fmt_tick(y)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (left + right) / 2.0,
        HEIGHT - 14.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate(18,{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (top + bottom) / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, entries: &[(String, &str, bool)], notes: &[String]) {
    let x = WIDTH - MARGIN_RIGHT + 12.0;
    let mut y = MARGIN_TOP + 10.0;
    for (label, color, dashed) in entries {
        let dash = if *dashed {
            r#" stroke-dasharray="5,3""#
        } else {
            ""
        };
        let _ = writeln!(
            out,
            r#"<line x1="{x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{color}" stroke-width="2"{dash}/><text x="{:.1}" y="{:.1}">{}</text>"#,
            x + 22.0,
            x + 28.0,
            y + 4.0,
            escape(label)
        );
        y += 18.0;
    }
    for note in notes {
        y += 4.0;
        let _ = writeln!(
            out,
            r##"<text x="{x:.1}" y="{y:.1}" font-size="10" fill="#555">{}</text>"##,
            escape(note)
        );
        y += 14.0;
    }
}

/// Line plot with logarithmic x axis; bands are drawn as translucent fills.
pub fn line_plot_logx(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[LineSeries],
    notes: &[String],
) -> String {
    let pts = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(x, y)| *x > 0.0 && y.is_finite());
    let (mut x0, mut x1, mut y1) = (f64::INFINITY, 0.0f64, 0.0f64);
    for (x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    for s in series {
        if let Some(b) = &s.band {
            for ((_, y), h) in s.points.iter().zip(b) {
                if (y + h).is_finite() {
                    y1 = y1.max(y + h);
                }
            }
        }
    }
    if !x0.is_finite() {
        x0 = 1.0;
        x1 = 10.0;
    }
    if x1 <= x0 {
        x1 = x0 * 10.0;
    }
    let y_top = if y1 > 0.0 { y1 * 1.05 } else { 1.0 };
    let y_ticks = linear_ticks(0.0, y_top);
    let frame = Frame {
        x0: 10f64.powf(x0.log10().floor()),
        x1: 10f64.powf(x1.log10().ceil()),
        y0: 0.0,
        y1: y_top,
        log_x: true,
    };
    let mut x_ticks = Vec::new();
    let mut d = frame.x0;
    while d <= frame.x1 * (1.0 + 1e-9) {
        x_ticks.push(d);
        d *= 10.0;
    }

    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &frame, &x_ticks, &y_ticks, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        let c = color(i);
        let valid: Vec<(usize, (f64, f64))> = s
            .points
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, (x, y))| *x > 0.0 && y.is_finite())
            .collect();
        if let Some(b) = &s.band {
            let upper = valid
                .iter()
                .map(|(j, (x, y))| (frame.px(*x), frame.py(y + b[*j])));
            let lower = valid
                .iter()
                .rev()
                .map(|(j, (x, y))| (frame.px(*x), frame.py((y - b[*j]).max(0.0))));
            let poly: Vec<String> = upper
                .chain(lower)
                .map(|(a, b)| format!("{a:.1},{b:.1}"))
                .collect();
            let _ = writeln!(
                out,
                r#"<polygon points="{}" fill="{c}" fill-opacity="0.18" stroke="none"/>"#,
                poly.join(" ")
            );
        }
        let line: Vec<String> = valid
            .iter()
            .map(|(_, (x, y))| format!("{:.1},{:.1}", frame.px(*x), frame.py(*y)))
            .collect();
        let dash = if s.dashed {
            r#" stroke-dasharray="5,3""#
        } else {
            ""
        };
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"{dash}/>"#,
            line.join(" ")
        );
    }
    let entries: Vec<(String, &str, bool)> = series
        .iter()
        .enumerate()
        .map(|(i, s)| (s.label.clone(), color(i), s.dashed))
        .collect();
    legend(&mut out, &entries, notes);
    out.push_str("</svg>\n");
    out
}

/// Overlaid histograms on shared bins, with an optional labelled vertical
/// reference line.
pub fn histogram(
    title: &str,
    x_label: &str,
    series: &[HistSeries],
    bins: usize,
    vline: Option<(f64, &str)>,
    notes: &[String],
) -> String {
    let bins = bins.max(1);
    let finite = series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .filter(|v| v.is_finite());
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in finite {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if let Some((v, _)) = vline {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi <= lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let counts: Vec<Vec<u64>> = series
        .iter()
        .map(|s| {
            let mut c = vec![0u64; bins];
            for &v in s.values.iter().filter(|v| v.is_finite()) {
                let b = (((v - lo) / width) as usize).min(bins - 1);
                c[b] += 1;
            }
            c
        })
        .collect();
    let max_count = counts.iter().flatten().copied().max().unwrap_or(0).max(1);
    let y_top = max_count as f64 * 1.05;
    let y_ticks = linear_ticks(0.0, y_top);
    let frame = Frame {
        x0: lo,
        x1: hi,
        y0: 0.0,
        y1: y_top,
        log_x: false,
    };

    let mut out = String::new();
    header(&mut out, title);
    axes(
        &mut out,
        &frame,
        &linear_ticks(lo, hi),
        &y_ticks,
        x_label,
        "trials",
    );
    for (i, c) in counts.iter().enumerate() {
        let col = color(i);
        for (b, &n) in c.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let xa = frame.px(lo + b as f64 * width);
            let xb = frame.px(lo + (b + 1) as f64 * width);
            let ya = frame.py(n as f64);
            let _ = writeln!(
                out,
                r#"<rect x="{xa:.1}" y="{ya:.1}" width="{:.1}" height="{:.1}" fill="{col}" fill-opacity="0.45" stroke="{col}" stroke-width="0.5"/>"#,
                (xb - xa).max(0.5),
                frame.py(0.0) - ya
            );
        }
    }
    let mut entries: Vec<(String, &str, bool)> = series
        .iter()
        .enumerate()
        .map(|(i, s)| (s.label.clone(), color(i), false))
        .collect();
    if let Some((v, label)) = vline {
        let px = frame.px(v);
        let _ = writeln!(
            out,
            r#"<line x1="{px:.1}" y1="{MARGIN_TOP}" x2="{px:.1}" y2="{:.1}" stroke="black" stroke-width="1.5" stroke-dasharray="6,4"/>"#,
            HEIGHT - MARGIN_BOTTOM
        );
        entries.push((label.to_string(), "black", true));
    }
    legend(&mut out, &entries, notes);
    out.push_str("</svg>\n");
    out
}
