//! Learning curves as standalone SVG: mean across seeds with a one-std band.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::trainer::{mean_std, EpisodeMetrics};

#[derive(Debug, Clone, PartialEq)]
pub struct CurveBand {
    pub label: String,
    pub mean: Vec<f64>,
    /// Sample standard deviation across runs at each episode.
    pub std: Vec<f64>,
    pub runs: usize,
    /// True when runs had different lengths and were cut to the shortest.
    pub truncated: bool,
}

pub fn metric_column(rows: &[EpisodeMetrics], column: &str) -> Result<Vec<f64>> {
    let pick: fn(&EpisodeMetrics) -> f64 = match column {
        "return_env" => |m| m.return_env,
        "return_shaped" => |m| m.return_shaped,
        "steps" => |m| m.steps as f64,
        "epsilon" => |m| m.epsilon,
        "r_a_fired" => |m| m.r_a_fired as f64,
        "r_s_fired" => |m| m.r_s_fired as f64,
        "cycles_penalized" => |m| m.cycles_penalized as f64,
        "fnn_agreement" => |m| m.fnn_agreement,
        "feedback_total" => |m| m.feedback_total as f64,
        other => return Err(Error::usage(format!("unknown metrics column {other:?}"))),
    };
    Ok(rows.iter().map(pick).collect())
}

/// Trailing moving average over `window` episodes (1 leaves the data alone).
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut sum = 0.0;
    let mut out = Vec::with_capacity(values.len());
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= w {
            sum -= values[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

pub fn aggregate(label: &str, runs: &[Vec<f64>]) -> Result<CurveBand> {
    let Some(len) = runs.iter().map(Vec::len).min() else {
        return Err(Error::usage("no runs to aggregate"));
    };
    if len == 0 {
        return Err(Error::usage("a metrics file has no rows"));
    }
    let truncated = runs.iter().any(|r| r.len() != len);
    if truncated {
        log::warn!("{label}: runs differ in length; truncating to {len} episodes");
    }
    let (mean, std) = (0..len)
        .map(|e| mean_std(&runs.iter().map(|r| r[e]).collect::<Vec<_>>()))
        .unzip();
    Ok(CurveBand { label: label.to_string(), mean, std, runs: runs.len(), truncated })
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const W: f64 = 800.0;
const H: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render_svg(curves: &[CurveBand], title: &str, y_label: &str) -> Result<String> {
    if curves.is_empty() {
        return Err(Error::usage("nothing to plot"));
    }
    let episodes = curves.iter().map(|c| c.mean.len()).max().unwrap_or(1).max(2);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in curves {
        for (m, s) in c.mean.iter().zip(&c.std) {
            lo = lo.min(m - s);
            hi = hi.max(m + s);
        }
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::numeric("curve contains non-finite values"));
    }
    if hi - lo < 1e-9 {
        lo -= 1.0;
        hi += 1.0;
    }
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let x = |e: usize| LEFT + pw * e as f64 / (episodes - 1) as f64;
    let y = |v: f64| TOP + ph * (hi - v) / (hi - lo);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    for i in 0..=5 {
        let v = lo + (hi - lo) * i as f64 / 5.0;
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{0:.2}" x2="{1}" y2="{0:.2}" stroke="#ddd"/><text x="{2}" y="{3:.2}" text-anchor="end">{4:.1}</text>"##,
            y(v),
            LEFT + pw,
            LEFT - 6.0,
            y(v) + 4.0,
            v
        );
        let e = (episodes - 1) * i / 5;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{e}</text>"#,
            x(e),
            TOP + ph + 18.0
        );
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">episode</text>"#, LEFT + pw / 2.0, H - 10.0);
    let _ = writeln!(
        svg,
        r#"<text transform="translate(16 {}) rotate(-90)" text-anchor="middle">{}</text>"#,
        TOP + ph / 2.0,
        escape(y_label)
    );
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut band = String::new();
        for (e, (m, s)) in c.mean.iter().zip(&c.std).enumerate() {
            let _ = write!(band, "{:.2},{:.2} ", x(e), y(m + s));
        }
        for (e, (m, s)) in c.mean.iter().zip(&c.std).enumerate().rev() {
            let _ = write!(band, "{:.2},{:.2} ", x(e), y(m - s));
        }
        let _ = writeln!(
            svg,
            r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band.trim_end()
        );
        let line: Vec<String> = c.mean.iter().enumerate().map(|(e, m)| format!("{:.2},{:.2}", x(e), y(*m))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="mean" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            line.join(" ")
        );
        let ly = TOP + 16.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{lx}" y="{}" width="14" height="8" fill="{color}"/><text x="{}" y="{ly}">{} (n={})</text>"#,
            ly - 8.0,
            lx + 20.0,
            escape(&c.label),
            c.runs
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
