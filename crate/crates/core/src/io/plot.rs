//! Minimal static SVG plots: survival step functions with bands, covariate
//! balance dot plots, and line charts for simulation summaries.

use std::fmt::Write;

use crate::density_ratio::BalanceReport;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub times: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalSeries {
    pub label: String,
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub band: Option<Band>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let (x0, x1, y0, y1) = (f.px(f.x.0), f.px(f.x.1), f.py(f.y.0), f.py(f.y.1));
    let _ = writeln!(
        out,
        r#"<path d="M{x0:.1},{y1:.1} L{x0:.1},{y0:.1} L{x1:.1},{y0:.1}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let fx = f.x.0 + (f.x.1 - f.x.0) * k as f64 / 4.0;
        let fy = f.y.0 + (f.y.1 - f.y.0) * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            f.px(fx),
            y0 + 16.0,
            tick(fx)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            f.py(fy) + 4.0,
            tick(fy)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 12.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn legend(out: &mut String, labels: &[&str]) {
    for (k, label) in labels.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * k as f64;
        let x = W - RIGHT + 12.0;
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/>"#,
            x + 18.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}">{}</text>"#,
            x + 24.0,
            y + 4.0,
            escape(label)
        );
    }
}

/// Right-continuous step path starting at `(0, 1)`.
fn step_path(f: &Frame, times: &[f64], values: &[f64], start: f64, end: f64) -> String {
    let mut d = format!("M{:.2},{:.2}", f.px(0.0), f.py(start));
    let mut prev = start;
    for (&t, &v) in times.iter().zip(values) {
        let _ = write!(d, " L{:.2},{:.2} L{:.2},{:.2}", f.px(t), f.py(prev), f.px(t), f.py(v));
        prev = v;
    }
    let _ = write!(d, " L{:.2},{:.2}", f.px(end), f.py(prev));
    d
}

pub fn survival_svg(title: &str, series: &[SurvivalSeries]) -> String {
    let t_max = series
        .iter()
        .flat_map(|s| s.times.iter().copied())
        .fold(0.0, f64::max)
        .max(1e-9);
    let f = Frame {
        x: (0.0, t_max),
        y: (0.0, 1.0),
    };
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, "time", "survival probability");
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if let Some(b) = &s.band {
            let mut d = step_path(&f, &b.times, &b.upper, 1.0, t_max);
            let lower = step_path(&f, &b.times, &b.lower, 1.0, t_max);
            // close the polygon by walking the lower step path backwards
            let pts: Vec<&str> = lower.trim_start_matches('M').split(" L").collect();
            for p in pts.iter().rev() {
                let _ = write!(d, " L{p}");
            }
            d.push_str(" Z");
            let _ = writeln!(
                out,
                r#"<path d="{d}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#
            );
        }
        let d = step_path(&f, &s.times, &s.survival, 1.0, t_max);
        let _ = writeln!(
            out,
            r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#
        );
    }
    legend(&mut out, &series.iter().map(|s| s.label.as_str()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Dot plot of absolute SMDs per covariate, unweighted (open) and weighted
/// (filled), with a dashed line at the balance threshold.
pub fn balance_svg(report: &BalanceReport) -> String {
    let finite_max = report
        .covariates
        .iter()
        .flat_map(|c| [c.unweighted_smd, c.weighted_smd])
        .filter(|v| v.is_finite())
        .fold(report.threshold, f64::max);
    let f = Frame {
        x: (0.0, finite_max * 1.1),
        y: (0.0, report.covariates.len().max(1) as f64 + 1.0),
    };
    let mut out = String::new();
    header(&mut out, "Covariate balance");
    axes(&mut out, &f, "absolute standardized mean difference", "");
    let tx = f.px(report.threshold);
    let _ = writeln!(
        out,
        r#"<line x1="{tx:.2}" y1="{:.2}" x2="{tx:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4 3"/>"#,
        f.py(f.y.1),
        f.py(0.0)
    );
    for (k, c) in report.covariates.iter().enumerate() {
        let y = f.py(k as f64 + 1.0);
        let clamp = |v: f64| if v.is_finite() { v } else { f.x.1 };
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            LEFT - 8.0,
            y + 4.0,
            escape(&c.name)
        );
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{y:.2}" r="4" fill="none" stroke="{}"/>"#,
            f.px(clamp(c.unweighted_smd)),
            PALETTE[0]
        );
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{y:.2}" r="4" fill="{}"/>"#,
            f.px(clamp(c.weighted_smd)),
            PALETTE[1]
        );
    }
    legend(&mut out, &["unweighted", "weighted"]);
    out.push_str("</svg>\n");
    out
}

/// Line chart, optionally with a dashed horizontal reference line.
pub fn line_svg(title: &str, xlabel: &str, ylabel: &str, series: &[LineSeries], reference: Option<f64>) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .chain(reference)
        .filter(|v| v.is_finite());
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    let pad = |a: f64, b: f64| {
        if a.is_finite() && b > a {
            (a, b)
        } else if a.is_finite() {
            (a - 0.5, a + 0.5)
        } else {
            (0.0, 1.0)
        }
    };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    let margin = (y1 - y0) * 0.05;
    let f = Frame {
        x: (x0, x1),
        y: (y0 - margin, y1 + margin),
    };
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, xlabel, ylabel);
    if let Some(r) = reference {
        let y = f.py(r);
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="gray" stroke-dasharray="4 3"/>"#,
            f.px(x0),
            f.px(x1)
        );
    }
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        for p in &pts {
            let (cx, cy) = p.split_once(',').unwrap_or(("0", "0"));
            let _ = writeln!(out, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
        }
    }
    legend(&mut out, &series.iter().map(|s| s.label.as_str()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density_ratio::CovariateBalance;

    #[test]
    fn survival_plot_is_well_formed() {
        let svg = survival_svg(
            "KM",
            &[SurvivalSeries {
                label: "a<b".into(),
                times: vec![1.0, 2.0],
                survival: vec![0.5, 0.25],
                band: Some(Band {
                    times: vec![1.0, 2.0],
                    lower: vec![0.3, 0.1],
                    upper: vec![0.7, 0.4],
                }),
            }],
        );
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg.matches("<path").count(), 3);
    }

    #[test]
    fn balance_plot_has_threshold_and_dots() {
        let report = BalanceReport {
            threshold: 0.1,
            covariates: vec![CovariateBalance {
                name: "z1".into(),
                unweighted_smd: 0.4,
                weighted_smd: f64::INFINITY,
                flagged: true,
            }],
        };
        let svg = balance_svg(&report);
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains("stroke-dasharray"));
        assert!(!svg.contains("inf") && !svg.contains("NaN"));
    }
}
