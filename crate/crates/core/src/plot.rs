//! Minimal self-contained SVG line charts for the run artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::Signal;

const WIDTH: f64 = 960.0;
const PANEL_HEIGHT: f64 = 220.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 40.0;
/// Longer series are reduced to a min/max envelope of this many buckets.
const MAX_BUCKETS: usize = 1500;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    /// A time series, reduced for drawing.
    pub fn from_signal(label: impl Into<String>, sig: &Signal) -> Self {
        Self {
            label: label.into(),
            points: reduce(sig),
        }
    }
}

/// One stacked panel: a title and the series drawn on shared axes.
pub struct Panel<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub series: Vec<Series>,
}

/// Points to draw for `sig`, keeping the extremes of each bucket so short
/// pulses survive the reduction.
fn reduce(sig: &Signal) -> Vec<(f64, f64)> {
    let xs = sig.samples();
    if xs.len() <= 2 * MAX_BUCKETS {
        return xs.iter().enumerate().map(|(i, &v)| (sig.time_of(i), v)).collect();
    }
    let per = xs.len().div_ceil(MAX_BUCKETS);
    let mut pts = Vec::with_capacity(2 * MAX_BUCKETS);
    for (b, chunk) in xs.chunks(per).enumerate() {
        let base = b * per;
        let (mut lo, mut hi) = (0, 0);
        for (i, &v) in chunk.iter().enumerate() {
            if v < chunk[lo] {
                lo = i;
            }
            if v > chunk[hi] {
                hi = i;
            }
        }
        let (a, c) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        pts.push((sig.time_of(base + a), chunk[a]));
        if c != a {
            pts.push((sig.time_of(base + c), chunk[c]));
        }
    }
    pts
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the panels as one SVG document.
pub fn render(title: &str, panels: &[Panel<'_>]) -> String {
    let height = 30.0 + panels.len() as f64 * PANEL_HEIGHT;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    for (p, panel) in panels.iter().enumerate() {
        let top = 30.0 + p as f64 * PANEL_HEIGHT;
        let (x0, x1) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
        let (y0, y1) = (top + MARGIN_TOP, top + PANEL_HEIGHT - MARGIN_BOTTOM);
        let all = || panel.series.iter().flat_map(|s| s.points.iter());
        let (tmin, tmax) = bounds(all().map(|p| p.0));
        let (vmin, vmax) = bounds(all().map(|p| p.1));
        let sx = |t: f64| x0 + (t - tmin) / (tmax - tmin) * (x1 - x0);
        let sy = |v: f64| y1 - (v - vmin) / (vmax - vmin) * (y1 - y0);

        let _ = writeln!(
            svg,
            r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="gray"/>"#,
            x1 - x0,
            y1 - y0
        );
        let _ = writeln!(svg, r#"<text x="{x0}" y="{}">{}</text>"#, y0 - 6.0, escape(panel.title));
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let t = tmin + f * (tmax - tmin);
            let v = vmin + f * (vmax - vmin);
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.3}</text>"#,
                sx(t),
                y1 + 14.0,
                t
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
                x0 - 4.0,
                sy(v) + 4.0,
                v
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            y1 + 30.0,
            escape(panel.x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text transform="translate(14 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
            (y0 + y1) / 2.0,
            escape(panel.y_label)
        );
        for (i, s) in panel.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let mut d = String::with_capacity(s.points.len() * 16);
            for (j, &(t, v)) in s.points.iter().enumerate() {
                let _ = write!(d, "{}{:.2},{:.2}", if j == 0 { "M" } else { " L" }, sx(t), sy(v));
            }
            let _ = writeln!(
                svg,
                r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1"/>"#
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" fill="{color}" text-anchor="end">{}</text>"#,
                x1 - 4.0,
                y0 + 14.0 * (i + 1) as f64,
                escape(&s.label)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_svg(path: &Path, title: &str, panels: &[Panel<'_>]) -> Result<()> {
    fs::write(path, render(title, panels)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
