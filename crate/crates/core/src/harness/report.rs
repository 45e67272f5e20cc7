//! Hand-rolled SVG line charts of a training trace.

use std::fmt::Write as _;

use super::HarnessError;
use crate::policy::{StepRecord, TraceRecord};

const WIDTH: f64 = 640.0;
const PANEL_HEIGHT: f64 = 220.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 32.0;
const MARGIN_BOTTOM: f64 = 40.0;

struct Panel<'a> {
    title: &'a str,
    color: &'a str,
    points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

fn draw_panel(svg: &mut String, panel: &Panel<'_>, top: f64) {
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = PANEL_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let (x0, x1) = range(panel.points.iter().map(|p| p.0));
    let (y0, y1) = range(panel.points.iter().map(|p| p.1));
    let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| top + MARGIN_TOP + plot_h - (y - y0) / (y1 - y0) * plot_h;

    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="14" font-family="sans-serif">{}</text>"#,
        MARGIN_LEFT,
        top + 20.0,
        escape(panel.title)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN_LEFT:.1}" y="{:.1}" width="{plot_w:.1}" height="{plot_h:.1}" fill="none" stroke="#999"/>"##,
        top + MARGIN_TOP
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let yv = y0 + f * (y1 - y0);
        let xv = x0 + f * (x1 - x0);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" font-family="sans-serif" text-anchor="end">{yv:.3}</text>"#,
            MARGIN_LEFT - 6.0,
            sy(yv) + 3.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" font-family="sans-serif" text-anchor="middle">{xv:.0}</text>"#,
            sx(xv),
            top + PANEL_HEIGHT - MARGIN_BOTTOM + 14.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" font-family="sans-serif" text-anchor="middle">step</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        top + PANEL_HEIGHT - 8.0
    );
    let path: Vec<String> = panel
        .points
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
        .collect();
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
        panel.color,
        path.join(" ")
    );
    for &(x, y) in &panel.points {
        let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}"/>"#, sx(x), sy(y), panel.color);
    }
}

/// Validation NDCG@10 and mean response tokens against step.
pub fn render_svg(steps: &[StepRecord]) -> Result<String, HarnessError> {
    if steps.is_empty() {
        return Err(HarnessError::Runtime("trace holds no training records".into()));
    }
    let panels = [
        Panel {
            title: "Validation NDCG@10",
            color: "#1f77b4",
            points: steps.iter().map(|s| (s.step as f64, s.validation_ndcg)).collect(),
        },
        Panel {
            title: "Mean response tokens",
            color: "#d62728",
            points: steps.iter().map(|s| (s.step as f64, s.mean_tokens)).collect(),
        },
    ];
    let height = PANEL_HEIGHT * panels.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        draw_panel(&mut svg, p, i as f64 * PANEL_HEIGHT);
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn train_records(records: &[TraceRecord]) -> Vec<StepRecord> {
    records
        .iter()
        .filter_map(|r| match r {
            TraceRecord::Train(s) => Some(s.clone()),
            TraceRecord::Eval(_) => None,
        })
        .collect()
}
