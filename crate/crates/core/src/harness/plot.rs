//! Learning-curve artifacts: a smoothed curve CSV plus one SVG per environment
//! drawn from exactly those values, with a ±1 standard deviation band.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::aggregate::{curves_csv, parse_curves, smooth, Curve};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Files written by [`plot`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlotArtifacts {
    pub csv: PathBuf,
    pub svgs: Vec<PathBuf>,
}

/// Smooths the mean and variance of every curve with a trailing window.
pub fn smooth_curves(curves: &[Curve], window: usize) -> Result<Vec<Curve>> {
    curves
        .iter()
        .map(|c| {
            Ok(Curve {
                mean: smooth(&c.mean, window)?,
                variance: smooth(&c.variance, window)?,
                ..c.clone()
            })
        })
        .collect()
}

/// Reads `aggregate.csv` from `aggregate_dir` and writes `curves.csv` and
/// `<env>.svg` into `out`. An aggregate without rows writes nothing and
/// returns `None`.
pub fn plot(aggregate_dir: &Path, out: &Path, window: usize) -> Result<Option<PlotArtifacts>> {
    let path = aggregate_dir.join("aggregate.csv");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let curves = parse_curves(&text)?;
    if curves.iter().all(|c| c.steps.is_empty()) {
        return Ok(None);
    }
    let curves = smooth_curves(&curves, window)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let csv = out.join("curves.csv");
    fs::write(&csv, curves_csv(&curves)).map_err(|e| Error::io(&csv, e))?;

    let mut by_env: BTreeMap<&str, Vec<&Curve>> = BTreeMap::new();
    for c in &curves {
        by_env.entry(c.env.as_str()).or_default().push(c);
    }
    let mut svgs = Vec::new();
    for (env, group) in by_env {
        let p = out.join(format!("{env}.svg"));
        fs::write(&p, render_svg(env, &group)).map_err(|e| Error::io(&p, e))?;
        svgs.push(p);
    }
    Ok(Some(PlotArtifacts { csv, svgs }))
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        MARGIN + (v - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - (v - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }
}

/// Data point `(step, mean)` at index `i` of `curve` as plotted.
pub fn plotted_points(curve: &Curve) -> Vec<(f64, f64)> {
    curve.steps.iter().zip(&curve.mean).map(|(&s, &m)| (s as f64, m)).collect()
}

pub fn render_svg(env: &str, curves: &[&Curve]) -> String {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut x1 = 1.0f64;
    for c in curves {
        for i in 0..c.steps.len() {
            let sd = c.variance[i].sqrt();
            lo = lo.min(c.mean[i] - sd);
            hi = hi.max(c.mean[i] + sd);
            x1 = x1.max(c.steps[i] as f64);
        }
    }
    if !(hi > lo) {
        lo -= 1.0;
        hi += 1.0;
    }
    let frame = Frame {
        x0: 0.0,
        x1,
        y0: lo,
        y1: hi,
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{env}</text>"#, WIDTH / 2.0);
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        svg,
        r#"<polyline points="{left},{top} {left},{bottom} {right},{bottom}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(svg, r#"<text x="{left}" y="{}" text-anchor="start">{lo:.1}</text>"#, bottom + 16.0);
    let _ = writeln!(svg, r#"<text x="4" y="{top}">{hi:.1}</text>"#);
    let _ = writeln!(svg, r#"<text x="{right}" y="{}" text-anchor="end">{x1}</text>"#, bottom + 16.0);
    for (k, c) in curves.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let upper: Vec<String> = (0..c.steps.len())
            .map(|i| format!("{:.2},{:.2}", frame.x(c.steps[i] as f64), frame.y(c.mean[i] + c.variance[i].sqrt())))
            .collect();
        let lower: Vec<String> = (0..c.steps.len())
            .rev()
            .map(|i| format!("{:.2},{:.2}", frame.x(c.steps[i] as f64), frame.y(c.mean[i] - c.variance[i].sqrt())))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polygon points="{} {}" fill="{colour}" fill-opacity="0.2" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = plotted_points(c)
            .iter()
            .map(|&(s, m)| format!("{:.2},{:.2}", frame.x(s), frame.y(m)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"><title>{}</title></polyline>"#,
            line.join(" "),
            c.algorithm
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{colour}">{}</text>"#,
            right - 90.0,
            top + 16.0 * (k as f64 + 1.0),
            c.algorithm
        );
    }
    svg.push_str("</svg>\n");
    svg
}
