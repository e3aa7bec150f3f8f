//! Minimal SVG line plots derived from summary CSVs. No interactive UI;
//! re-runnable from the CSVs without recomputation.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};

use crate::csvio::AggregateRow;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 60.0;

pub struct Series<'a> {
    pub label: &'a str,
    /// (x, y, stderr)
    pub points: Vec<(f64, f64, f64)>,
    pub color: &'a str,
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|s| s * mag)
        .find(|&s| span / s <= 6.0)
        .unwrap_or(mag * 10.0);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-12 * span {
        out.push(t);
        t += step;
    }
    out
}

pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>]) -> String {
    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let ys: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().flat_map(|p| [p.1 - p.2, p.1 + p.2]))
        .collect();
    let (x_lo, x_hi) = bounds(&xs);
    let (y_lo, y_hi) = bounds(&ys);
    let px = |x: f64| MARGIN + (x - x_lo) / (x_hi - x_lo).max(1e-300) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - y_lo) / (y_hi - y_lo).max(1e-300) * (H - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{title}</text>
"#,
        W / 2.0
    );
    // axes
    let _ = write!(
        svg,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>
"#,
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN,
        t = MARGIN
    );
    for t in nice_ticks(x_lo, x_hi) {
        let x = px(t);
        let _ = write!(
            svg,
            r#"<line x1="{x}" y1="{b}" x2="{x}" y2="{b2}" stroke="black"/><text x="{x}" y="{ty}" text-anchor="middle" font-family="sans-serif" font-size="11">{t}</text>
"#,
            b = H - MARGIN,
            b2 = H - MARGIN + 5.0,
            ty = H - MARGIN + 18.0,
        );
    }
    for t in nice_ticks(y_lo, y_hi) {
        let y = py(t);
        let _ = write!(
            svg,
            r#"<line x1="{m}" y1="{y}" x2="{m2}" y2="{y}" stroke="black"/><text x="{tx}" y="{yy}" text-anchor="end" font-family="sans-serif" font-size="11">{tv}</text>
"#,
            m = MARGIN,
            m2 = MARGIN - 5.0,
            tx = MARGIN - 8.0,
            yy = y + 4.0,
            tv = (t * 1e6).round() / 1e6,
        );
    }
    let _ = write!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{x_label}</text>
<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">{y_label}</text>
"#,
        W / 2.0,
        H - 16.0,
        H / 2.0,
        H / 2.0
    );

    for (si, s) in series.iter().enumerate() {
        let mut path = String::new();
        for (i, (x, y, _)) in s.points.iter().enumerate() {
            let _ = write!(path, "{}{},{}", if i == 0 { "M" } else { " L" }, px(*x), py(*y));
        }
        let _ = write!(svg, r#"<path d="{path}" fill="none" stroke="{}" stroke-width="1.8"/>"#, s.color);
        svg.push('\n');
        for (x, y, se) in &s.points {
            let _ = write!(
                svg,
                r#"<circle cx="{}" cy="{}" r="3" fill="{}"/><line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{}"/>
"#,
                px(*x),
                py(*y),
                s.color,
                px(*x),
                py(y - se),
                px(*x),
                py(y + se),
                s.color
            );
        }
        let ly = MARGIN + 16.0 * si as f64;
        let _ = write!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="1.8"/><text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text>
"#,
            W - MARGIN - 120.0,
            W - MARGIN - 96.0,
            s.color,
            W - MARGIN - 90.0,
            ly + 4.0,
            s.label
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(vals: &[f64]) -> (f64, f64) {
    let finite: Vec<f64> = vals.iter().cloned().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return (0.0, 1.0);
    }
    let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = (hi - lo) * 0.05;
        (lo - pad, hi + pad)
    }
}

/// Spurious-norm and recovery-error plots for a numeric-grid sweep.
pub fn emit_sweep_plots(agg: &[AggregateRow], x_label: &str, dir: &Path) -> Result<()> {
    let numeric: Vec<(f64, &AggregateRow)> = agg
        .iter()
        .filter_map(|r| r.grid_value.parse::<f64>().ok().map(|v| (v, r)))
        .collect();
    if numeric.is_empty() {
        return Ok(());
    }
    let q = Series {
        label: "spurious |Q_T|_F",
        points: numeric.iter().map(|(x, r)| (*x, r.mean_q_fro, r.stderr_q_fro)).collect(),
        color: "#c0392b",
    };
    let rec = Series {
        label: "recovery error",
        points: numeric
            .iter()
            .map(|(x, r)| (*x, r.mean_recovery_error, r.stderr_recovery_error))
            .collect(),
        color: "#2a6fb0",
    };
    std::fs::write(
        dir.join("spurious_vs_grid.svg"),
        line_plot("final spurious norm", x_label, "|Q_T|_F", &[q]),
    )
    .context("writing spurious plot")?;
    std::fs::write(
        dir.join("recovery_vs_grid.svg"),
        line_plot("final recovery error", x_label, "|U U^T - X*|_F", &[rec]),
    )
    .context("writing recovery plot")?;
    Ok(())
}
