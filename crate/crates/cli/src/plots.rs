//! Self-contained SVG charts: line plots, densities, box plots, and grouped
//! bars. Every chart has numeric ticks on both axes and axis labels.

use std::fmt::Write as _;

use wdcgan_core::metrics::{BoxStats, Histogram};

use crate::error::CliError;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 450.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Round tick positions covering `[lo, hi]`, roughly `target` of them.
pub fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let raw = (hi - lo) / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn tick_label(v: f64, step: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if v.abs() >= 1e5 || step < 1e-4 {
        return format!("{v:.2e}");
    }
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    format!("{v:.decimals$}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn padded(x: (f64, f64), y: (f64, f64)) -> Frame {
        let pad = |(lo, hi): (f64, f64)| {
            if hi > lo {
                let m = 0.05 * (hi - lo);
                (lo - m, hi + m)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        };
        Frame { x: pad(x), y: pad(y) }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
}

fn open(title: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = write!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        escape(title)
    );
    s
}

fn axes(s: &mut String, f: &Frame, x_label: &str, y_label: &str, x_ticks: bool) {
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = write!(
        s,
        r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#
    );
    if x_ticks {
        let ticks = nice_ticks(f.x.0, f.x.1, 6);
        let step = ticks.get(1).zip(ticks.first()).map_or(1.0, |(b, a)| b - a);
        for t in ticks {
            let x = f.px(t);
            let _ = write!(
                s,
                r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
                y0 + 5.0,
                y0 + 18.0,
                tick_label(t, step)
            );
        }
    }
    let ticks = nice_ticks(f.y.0, f.y.1, 6);
    let step = ticks.get(1).zip(ticks.first()).map_or(1.0, |(b, a)| b - a);
    for t in ticks {
        let y = f.py(t);
        let _ = write!(
            s,
            r##"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/><line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#e0e0e0"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
            x0 - 5.0,
            x0 - 8.0,
            y + 4.0,
            tick_label(t, step)
        );
    }
    let _ = write!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 15.0,
        escape(x_label)
    );
    let _ = write!(
        s,
        r#"<text x="20" y="{}" text-anchor="middle" transform="rotate(-90 20 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn legend(s: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 10.0 + 20.0 * i as f64;
        let x = WIDTH - RIGHT + 15.0;
        let _ = write!(
            s,
            r#"<rect x="{x}" y="{}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            y - 10.0,
            PALETTE[i % PALETTE.len()],
            x + 18.0,
            y,
            escape(name)
        );
    }
}

fn empty(what: &str) -> CliError {
    CliError::Precondition(format!("{what}: nothing to plot"))
}

/// Polylines; non-finite points break the line.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<String, CliError> {
    if series.iter().all(|s| s.points.iter().all(|p| !p.1.is_finite())) {
        return Err(empty(title));
    }
    let pts = || series.iter().flat_map(|s| s.points.iter()).filter(|p| p.1.is_finite());
    let f = Frame::padded(extent(pts().map(|p| p.0)), extent(pts().map(|p| p.1)));
    let mut s = open(title);
    axes(&mut s, &f, x_label, y_label, true);
    for (i, ser) in series.iter().enumerate() {
        let mut d = String::new();
        let mut pen_down = false;
        for (x, y) in &ser.points {
            if !y.is_finite() {
                pen_down = false;
                continue;
            }
            let _ = write!(d, "{}{:.2} {:.2} ", if pen_down { 'L' } else { 'M' }, f.px(*x), f.py(*y));
            pen_down = true;
        }
        let _ = write!(
            s,
            r#"<path d="{}" stroke="{}" stroke-width="1.5" fill="none"/>"#,
            d.trim_end(),
            PALETTE[i % PALETTE.len()]
        );
    }
    legend(&mut s, &series.iter().map(|x| x.name.as_str()).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    Ok(s)
}

/// Histogram densities as bars, with optional smooth curves on top.
pub fn density_plot(
    title: &str,
    x_label: &str,
    hists: &[(String, Histogram)],
    curves: &[Series],
) -> Result<String, CliError> {
    if hists.is_empty() {
        return Err(empty(title));
    }
    let xs = extent(hists.iter().flat_map(|(_, h)| h.edges.iter().copied()).chain(
        curves.iter().flat_map(|c| c.points.iter().map(|p| p.0)),
    ));
    let ymax = hists
        .iter()
        .flat_map(|(_, h)| h.density.iter().copied())
        .chain(curves.iter().flat_map(|c| c.points.iter().map(|p| p.1)))
        .fold(0.0f64, f64::max);
    let mut f = Frame::padded(xs, (0.0, ymax));
    f.y.0 = 0.0;
    let mut s = open(title);
    axes(&mut s, &f, x_label, "probability density", true);
    for (i, (_, h)) in hists.iter().enumerate() {
        for b in 0..h.bins() {
            let (xa, xb) = (f.px(h.edges[b]), f.px(h.edges[b + 1]));
            let (ya, yb) = (f.py(h.density[b]), f.py(0.0));
            let _ = write!(
                s,
                r#"<rect x="{xa:.2}" y="{ya:.2}" width="{:.2}" height="{:.2}" fill="{}" fill-opacity="0.45" stroke="white" stroke-width="0.5"/>"#,
                (xb - xa).max(0.5),
                yb - ya,
                PALETTE[i % PALETTE.len()]
            );
        }
    }
    for (j, c) in curves.iter().enumerate() {
        let d: Vec<String> = c
            .points
            .iter()
            .enumerate()
            .map(|(k, (x, y))| format!("{}{:.2} {:.2}", if k == 0 { 'M' } else { 'L' }, f.px(*x), f.py(*y)))
            .collect();
        let _ = write!(
            s,
            r#"<path d="{}" stroke="{}" stroke-width="1.5" fill="none"/>"#,
            d.join(" "),
            PALETTE[(j + hists.len()) % PALETTE.len()]
        );
    }
    let names: Vec<&str> = hists
        .iter()
        .map(|(n, _)| n.as_str())
        .chain(curves.iter().map(|c| c.name.as_str()))
        .collect();
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn box_plot(title: &str, y_label: &str, boxes: &[(String, BoxStats)]) -> Result<String, CliError> {
    if boxes.is_empty() {
        return Err(empty(title));
    }
    let ys = extent(boxes.iter().flat_map(|(_, b)| [b.min, b.max]));
    let f = Frame::padded((0.0, boxes.len() as f64), ys);
    let mut s = open(title);
    axes(&mut s, &f, "", y_label, false);
    let slot = (WIDTH - LEFT - RIGHT) / boxes.len() as f64;
    for (i, (name, b)) in boxes.iter().enumerate() {
        let cx = LEFT + slot * (i as f64 + 0.5);
        let half = (slot * 0.2).min(40.0);
        let color = PALETTE[i % PALETTE.len()];
        let _ = write!(
            s,
            r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
            f.py(b.whisker_low),
            f.py(b.whisker_high)
        );
        for w in [b.whisker_low, b.whisker_high] {
            let _ = write!(
                s,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
                cx - half / 2.0,
                f.py(w),
                cx + half / 2.0,
                f.py(w)
            );
        }
        let _ = write!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.5" stroke="black"/>"#,
            cx - half,
            f.py(b.q3),
            2.0 * half,
            (f.py(b.q1) - f.py(b.q3)).max(0.5)
        );
        let _ = write!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="2"/>"#,
            cx - half,
            f.py(b.median),
            cx + half,
            f.py(b.median)
        );
        for o in &b.outliers {
            let _ = write!(
                s,
                r#"<circle cx="{cx:.2}" cy="{:.2}" r="2" fill="none" stroke="{color}"/>"#,
                f.py(*o)
            );
        }
        let _ = write!(
            s,
            r#"<text x="{cx:.2}" y="{}" text-anchor="middle">{}</text>"#,
            HEIGHT - BOTTOM + 18.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Grouped bars: one group per category, one bar per named series.
/// `hline` draws a labelled horizontal reference line.
pub fn bar_plot(
    title: &str,
    y_label: &str,
    categories: &[String],
    series: &[(String, Vec<f64>)],
    hline: Option<(f64, &str)>,
) -> Result<String, CliError> {
    if categories.is_empty() || series.is_empty() {
        return Err(empty(title));
    }
    if series.iter().any(|(_, v)| v.len() != categories.len()) {
        return Err(CliError::Precondition(format!("{title}: series lengths differ from categories")));
    }
    let ymax = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .chain(hline.map(|h| h.0))
        .fold(0.0f64, f64::max);
    let mut f = Frame::padded((0.0, categories.len() as f64), (0.0, ymax));
    f.y.0 = 0.0;
    let mut s = open(title);
    axes(&mut s, &f, "", y_label, false);
    let slot = (WIDTH - LEFT - RIGHT) / categories.len() as f64;
    let bar = slot * 0.8 / series.len() as f64;
    for (c, cat) in categories.iter().enumerate() {
        let x0 = LEFT + slot * c as f64 + slot * 0.1;
        for (k, (_, vals)) in series.iter().enumerate() {
            let v = vals[c];
            let _ = write!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                x0 + bar * k as f64,
                f.py(v),
                bar,
                f.py(0.0) - f.py(v),
                PALETTE[k % PALETTE.len()]
            );
        }
        if categories.len() <= 40 {
            let cx = x0 + slot * 0.4;
            let y = HEIGHT - BOTTOM + 14.0;
            let _ = write!(
                s,
                r#"<text x="{cx:.2}" y="{y}" text-anchor="end" font-size="9" transform="rotate(-45 {cx:.2} {y})">{}</text>"#,
                escape(cat)
            );
        }
    }
    if let Some((v, label)) = hline {
        let y = f.py(v);
        let _ = write!(
            s,
            r#"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="black" stroke-dasharray="5 3"/><text x="{}" y="{:.2}">{}</text>"#,
            WIDTH - RIGHT,
            WIDTH - RIGHT + 5.0,
            y + 4.0,
            escape(label)
        );
    }
    let names: Vec<&str> = series.iter().map(|(n, _)| n.as_str()).collect();
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    Ok(s)
}
