//! Static SVG line charts.
//!
//! Output depends only on the input values, so identical input gives
//! identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{LabError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self { name: name.into(), points }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Log-scale x when every x is positive.
    pub log_x: bool,
    /// Log-scale y when every y is positive.
    pub log_y: bool,
    pub series: Vec<Series>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 9] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if (1e-3..1e4).contains(&v.abs()) {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi - lo > 1e-12 * hi.abs().max(lo.abs()) {
        (lo, hi)
    } else {
        let pad = 0.5 * lo.abs().max(1e-12);
        (lo - pad, hi + pad)
    }
}

impl Plot {
    pub fn render(&self) -> Result<String> {
        let finite = |&&(x, y): &&(f64, f64)| x.is_finite() && y.is_finite() && (!self.log_x || x > 0.0) && (!self.log_y || y > 0.0);
        let pts: Vec<(f64, f64)> = self.series.iter().flat_map(|s| s.points.iter().filter(finite)).copied().collect();
        if pts.is_empty() {
            return Err(LabError::invalid(format!("plot {:?} has no finite points", self.title)));
        }
        let fx = |x: f64| if self.log_x { x.log10() } else { x };
        let (x0, x1) = range(pts.iter().map(|p| fx(p.0)));
        let fy = |y: f64| if self.log_y { y.log10() } else { y };
        let (y0, y1) = range(pts.iter().map(|p| fy(p.1)));
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (fx(x) - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (y1 - fy(y)) / (y1 - y0) * ph;

        let mut o = String::new();
        let _ = writeln!(o, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            o,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(o, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(o, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(&self.title));
        let _ = writeln!(o, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = x0 + f * (x1 - x0);
            let label = if self.log_x { tick_label(10f64.powf(xv)) } else { tick_label(xv) };
            let px = LEFT + f * pw;
            let _ = writeln!(o, r#"<line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="black"/>"#, TOP + ph, TOP + ph + 5.0);
            let _ = writeln!(o, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{label}</text>"#, TOP + ph + 18.0);
            let yv = y0 + f * (y1 - y0);
            let py = TOP + ph - f * ph;
            let _ = writeln!(o, r#"<line x1="{}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/>"#, LEFT - 5.0);
            let _ = writeln!(o, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 8.0, py + 4.0, if self.log_y { tick_label(10f64.powf(yv)) } else { tick_label(yv) });
        }
        let x_label = if self.log_x { format!("{} (log scale)", self.x_label) } else { self.x_label.clone() };
        let _ = writeln!(o, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 15.0, escape(&x_label));
        let y_label = if self.log_y { format!("{} (log scale)", self.y_label) } else { self.y_label.clone() };
        let _ = writeln!(
            o,
            r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
            TOP + ph / 2.0,
            escape(&y_label)
        );
        for (i, s) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let sp: Vec<(f64, f64)> = s.points.iter().filter(finite).map(|&(x, y)| (sx(x), sy(y))).collect();
            if sp.len() > 1 {
                let path: Vec<String> = sp.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                let _ = writeln!(o, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
            }
            for (x, y) in &sp {
                let _ = writeln!(o, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
            }
            let ly = TOP + 10.0 + 16.0 * i as f64;
            let lx = W - RIGHT + 12.0;
            let _ = writeln!(o, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0);
            let _ = writeln!(o, r#"<text x="{}" y="{}">{}</text>"#, lx + 24.0, ly + 4.0, escape(&s.name));
        }
        o.push_str("</svg>\n");
        Ok(o)
    }
}

/// Renders `plot` to `path`. Errors on a plot without finite points.
pub fn emit_plot(plot: &Plot, path: &Path) -> Result<()> {
    if plot.series.is_empty() || plot.series.iter().all(|s| s.points.is_empty()) {
        return Err(LabError::invalid(format!("plot {:?} has no series data", plot.title)));
    }
    fs::write(path, plot.render()?)?;
    Ok(())
}
