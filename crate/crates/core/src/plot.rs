//! Minimal self-contained SVG plots.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;

pub enum PlotData {
    /// Bin edges and density values, with an optional curve drawn on top.
    Density {
        edges: Vec<f64>,
        values: Vec<f64>,
        overlay: Option<Vec<(f64, f64)>>,
        title: String,
    },
    /// Autocorrelation estimates with the curve `e^{−λτ}` scaled by `γ(0)`.
    Decay {
        lags: Vec<f64>,
        gamma: Vec<f64>,
        lambda: f64,
    },
    /// Rows are times, columns are grid nodes on `[0, 1]`.
    HeatMap {
        times: Vec<f64>,
        rows: Vec<Vec<f64>>,
    },
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let (y0, y1) = if y1 > y0 {
            (y0, y1)
        } else {
            (y0 - 1.0, y0 + 1.0)
        };
        let (x0, x1) = if x1 > x0 {
            (x0, x1)
        } else {
            (x0 - 1.0, x0 + 1.0)
        };
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }

    fn axes(&self, svg: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let (l, r, b, t) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
        let _ = writeln!(
            svg,
            r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            r - l,
            b - t
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="30" text-anchor="middle" font-size="16">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 14.0,
            escape(xlabel)
        );
        let _ = writeln!(
            svg,
            r#"<text x="16" y="{}" text-anchor="middle" font-size="13" transform="rotate(-90 16 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(ylabel)
        );
        for k in 0..=4 {
            let fx = self.x0 + (self.x1 - self.x0) * k as f64 / 4.0;
            let fy = self.y0 + (self.y1 - self.y0) * k as f64 / 4.0;
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{}" text-anchor="middle" font-size="11">{}</text>"#,
                self.px(fx),
                b + 16.0,
                tick(fx)
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{:.1}" text-anchor="end" font-size="11">{}</text>"#,
                l - 4.0,
                self.py(fy) + 4.0,
                tick(fy)
            );
        }
    }

    fn polyline(&self, svg: &mut String, pts: &[(f64, f64)], color: &str, dashed: bool) {
        let mut d = String::new();
        for (x, y) in pts {
            let y = y.clamp(self.y0, self.y1);
            let _ = write!(d, "{:.2},{:.2} ", self.px(*x), self.py(y));
        }
        let dash = if dashed {
            r#" stroke-dasharray="6 4""#
        } else {
            ""
        };
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.6"{dash}/>"#,
            d.trim_end()
        );
    }
}

fn tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 1e-2 && v.abs() < 1e4) {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn finite_range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    vals.filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
}

fn open() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Renders `data` as an SVG document.
pub fn render(data: &PlotData) -> Result<String> {
    let mut svg = open();
    match data {
        PlotData::Density {
            edges,
            values,
            overlay,
            title,
        } => {
            if values.is_empty() || edges.len() != values.len() + 1 {
                return Err(Error::EmptyData);
            }
            // cap the vertical range so integrable spikes do not flatten the plot
            let mut sorted: Vec<f64> = values.clone();
            sorted.sort_by(f64::total_cmp);
            let cap = sorted[(sorted.len() * 95 / 100).min(sorted.len() - 1)] * 1.5;
            let frame = Frame::new(edges[0], *edges.last().unwrap(), 0.0, cap);
            frame.axes(&mut svg, title, "x", "density");
            for (i, v) in values.iter().enumerate() {
                let (a, b) = (frame.px(edges[i]), frame.px(edges[i + 1]));
                let top = frame.py(v.min(cap));
                let _ = writeln!(
                    svg,
                    r##"<rect x="{a:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="#9ecae1" stroke="none"/>"##,
                    (b - a).max(0.1),
                    frame.py(0.0) - top
                );
            }
            if let Some(curve) = overlay {
                frame.polyline(&mut svg, curve, "#d62728", false);
            }
        }
        PlotData::Decay {
            lags,
            gamma,
            lambda,
        } => {
            if gamma.is_empty() || lags.len() != gamma.len() {
                return Err(Error::EmptyData);
            }
            let (lo, hi) = finite_range(gamma.iter().copied());
            let frame = Frame::new(
                lags[0],
                *lags.last().unwrap(),
                lo.min(0.0),
                hi.max(0.0) * 1.05,
            );
            frame.axes(
                &mut svg,
                "autocorrelation of the boundary trace",
                "lag",
                "gamma",
            );
            let est: Vec<(f64, f64)> = lags.iter().copied().zip(gamma.iter().copied()).collect();
            frame.polyline(&mut svg, &est, "#1f77b4", false);
            let reference: Vec<(f64, f64)> = lags
                .iter()
                .map(|&t| (t, gamma[0] * (-lambda * t).exp()))
                .collect();
            frame.polyline(&mut svg, &reference, "#d62728", true);
        }
        PlotData::HeatMap { times, rows } => {
            if rows.is_empty() || rows[0].is_empty() || times.len() != rows.len() {
                return Err(Error::EmptyData);
            }
            let (lo, hi) = finite_range(rows.iter().flatten().copied());
            let span = if hi > lo { hi - lo } else { 1.0 };
            let frame = Frame::new(0.0, 1.0, times[0], *times.last().unwrap());
            frame.axes(&mut svg, "trajectory", "x", "t");
            let cols = rows[0].len();
            let cw = (WIDTH - 2.0 * MARGIN) / cols as f64;
            let rh = (HEIGHT - 2.0 * MARGIN) / rows.len() as f64;
            for (r, row) in rows.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    let s = ((v - lo) / span).clamp(0.0, 1.0);
                    let (red, blue) = ((255.0 * s) as u8, (255.0 * (1.0 - s)) as u8);
                    let _ = writeln!(
                        svg,
                        r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({red},60,{blue})"/>"#,
                        MARGIN + c as f64 * cw,
                        HEIGHT - MARGIN - (r + 1) as f64 * rh,
                        cw + 0.05,
                        rh + 0.05
                    );
                }
            }
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_plot(data: &PlotData, path: &Path) -> Result<()> {
    let svg = render(data)?;
    std::fs::write(path, svg)?;
    Ok(())
}
