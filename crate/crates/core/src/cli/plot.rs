//! Static SVG line and scatter plots.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const TICKS: usize = 5;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub enum Series {
    Line {
        label: String,
        points: Vec<(f64, f64)>,
    },
    /// Points drawn with opacity proportional to `intensity / max(intensity)`.
    Scatter {
        label: String,
        points: Vec<(f64, f64)>,
        intensity: Option<Vec<f64>>,
    },
}

impl Series {
    pub fn line(label: impl Into<String>, xs: &[f64], ys: &[f64]) -> Self {
        Series::Line {
            label: label.into(),
            points: xs.iter().copied().zip(ys.iter().copied()).collect(),
        }
    }

    fn label(&self) -> &str {
        match self {
            Series::Line { label, .. } | Series::Scatter { label, .. } => label,
        }
    }

    fn points(&self) -> &[(f64, f64)] {
        match self {
            Series::Line { points, .. } | Series::Scatter { points, .. } => points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlotLabels {
    pub title: String,
    pub x: String,
    pub y: String,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn bounds(series: &[Series]) -> Option<(f64, f64, f64, f64)> {
    let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &(x, y) in s.points() {
            if x.is_finite() && y.is_finite() {
                b = (b.0.min(x), b.1.max(x), b.2.min(y), b.3.max(y));
            }
        }
    }
    if !b.0.is_finite() {
        return None;
    }
    let pad = |lo: f64, hi: f64| {
        if hi > lo {
            let p = 0.05 * (hi - lo);
            (lo - p, hi + p)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (x0, x1) = pad(b.0, b.1);
    let (y0, y1) = pad(b.2, b.3);
    Some((x0, x1, y0, y1))
}

/// Renders the series to an SVG document. Output depends only on the input.
pub fn render_svg(series: &[Series], labels: &PlotLabels) -> Result<String> {
    if series.is_empty() || series.iter().all(|s| s.points().is_empty()) {
        return Err(Error::invalid("nothing to plot"));
    }
    let (x0, x1, y0, y1) = bounds(series).ok_or_else(|| Error::invalid("no finite points to plot"))?;
    let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        MARGIN_LEFT + pw / 2.0,
        escape(&labels.title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    for i in 0..=TICKS {
        let f = i as f64 / TICKS as f64;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let bottom = MARGIN_TOP + ph;
        let _ = writeln!(
            svg,
            r#"<line x1="{px:.2}" y1="{bottom:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            bottom + 5.0,
            bottom + 18.0,
            tick(xv)
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{MARGIN_LEFT}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 5.0,
            MARGIN_LEFT - 8.0,
            py + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + pw / 2.0,
        HEIGHT - 10.0,
        escape(&labels.x)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        MARGIN_TOP + ph / 2.0,
        MARGIN_TOP + ph / 2.0,
        escape(&labels.y)
    );

    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        match s {
            Series::Line { points, .. } => {
                let coords: Vec<String> = points
                    .iter()
                    .filter(|(x, y)| x.is_finite() && y.is_finite())
                    .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                    .collect();
                let _ = writeln!(
                    svg,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    coords.join(" ")
                );
            }
            Series::Scatter { points, intensity, .. } => {
                let max = intensity
                    .as_ref()
                    .map(|w| w.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max))
                    .unwrap_or(0.0);
                let _ = writeln!(svg, r#"<g fill="{color}">"#);
                for (i, &(x, y)) in points.iter().enumerate() {
                    if !(x.is_finite() && y.is_finite()) {
                        continue;
                    }
                    let opacity = match intensity {
                        Some(w) if max > 0.0 => (w.get(i).copied().unwrap_or(0.0) / max).clamp(0.05, 1.0),
                        _ => 0.4,
                    };
                    let _ = writeln!(
                        svg,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill-opacity="{opacity:.3}"/>"#,
                        sx(x),
                        sy(y)
                    );
                }
                let _ = writeln!(svg, "</g>");
            }
        }
        let ly = MARGIN_TOP + 10.0 + 18.0 * k as f64;
        let lx = WIDTH - MARGIN_RIGHT + 12.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{lx:.2}" y="{:.2}" width="12" height="4" fill="{color}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            ly - 4.0,
            lx + 18.0,
            ly + 2.0,
            escape(s.label())
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

pub fn emit_plot(series: &[Series], labels: &PlotLabels, path: &Path) -> Result<()> {
    let svg = render_svg(series, labels)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
