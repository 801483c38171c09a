//! Plain-text tables and SVG bar charts of an analytics report.

use std::fmt::Write;

use ablab_core::analytics::AnalyticsReport;

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |p| format!("{p:.2}%"))
}

/// Coverage, focus share, pattern and group tables.
pub fn render_text(report: &AnalyticsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Parameter space: {} pairs",
        report.parameter_space.len()
    );
    for pair in &report.parameter_space {
        let _ = writeln!(out, "  {pair}");
    }

    let _ = writeln!(out, "\nCoverage");
    let _ = writeln!(
        out,
        "{:<12} {:<12} {:>8} {:>10} {:>10}",
        "group", "phase", "explored", "coverage", "focus"
    );
    for c in &report.coverage {
        let _ = writeln!(
            out,
            "{:<12} {:<12} {:>8} {:>10} {:>10}",
            c.group,
            c.phase,
            c.explored.len(),
            pct(Some(c.pct)),
            pct(report.focus_for(&c.group, &c.phase)),
        );
    }

    let _ = writeln!(out, "\nBehavior patterns");
    let _ = writeln!(
        out,
        "{:<12} {:>12} {:>12} {:>12}",
        "group", "Observation", "Construction", "Exploration"
    );
    for (g, h) in &report.patterns {
        let _ = writeln!(
            out,
            "{:<12} {:>12} {:>12} {:>12}",
            g, h.observation, h.construction, h.exploration
        );
    }

    let _ = writeln!(out, "\nGroups");
    let _ = writeln!(
        out,
        "{:<12} {:>8} {:>8} {:>14}",
        "group", "learners", "models", "mean session"
    );
    for (g, s) in &report.groups {
        let _ = writeln!(
            out,
            "{:<12} {:>8} {:>8} {:>13.1}m",
            g,
            s.learners,
            s.models,
            s.mean_session_time_s / 60.0
        );
    }
    out
}

struct Bar {
    label: String,
    value: f64,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn bar_chart(title: &str, bars: &[Bar], max: f64, unit: &str) -> String {
    let (width, row, left) = (640.0, 28.0, 220.0);
    let height = 40.0 + row * bars.len() as f64 + 10.0;
    let span = width - left - 80.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="10" y="20" font-size="14">{}</text>"#,
        escape(title)
    );
    for (i, b) in bars.iter().enumerate() {
        let y = 36.0 + row * i as f64;
        let w = if max > 0.0 { span * b.value / max } else { 0.0 };
        let _ = writeln!(
            svg,
            r#"<text x="10" y="{:.1}">{}</text>"#,
            y + 15.0,
            escape(&b.label)
        );
        let _ = writeln!(
            svg,
            r##"<rect x="{left}" y="{y:.1}" width="{w:.1}" height="20" fill="#4a78a8"/>"##
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}">{:.2}{unit}</text>"#,
            left + w + 6.0,
            y + 15.0,
            b.value
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Coverage per group and phase.
pub fn coverage_svg(report: &AnalyticsReport) -> String {
    let bars: Vec<Bar> = report
        .coverage
        .iter()
        .map(|c| Bar {
            label: format!("{} / {}", c.group, c.phase),
            value: c.pct,
        })
        .collect();
    bar_chart("Parameter-space coverage", &bars, 100.0, "%")
}

/// Session pattern counts per group.
pub fn patterns_svg(report: &AnalyticsReport) -> String {
    let mut bars = Vec::new();
    for (g, h) in &report.patterns {
        for (name, n) in [
            ("Observation", h.observation),
            ("Construction", h.construction),
            ("Exploration", h.exploration),
        ] {
            bars.push(Bar {
                label: format!("{g} / {name}"),
                value: n as f64,
            });
        }
    }
    let max = bars.iter().map(|b| b.value).fold(0.0, f64::max);
    bar_chart("Session patterns", &bars, max, "")
}
