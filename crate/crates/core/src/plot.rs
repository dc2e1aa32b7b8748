//! Static SVG line charts from metrics rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::harness::MetricsRow;
use crate::{Error, Result};

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

/// Render named (x, y) series as an SVG line chart with axes and a legend.
pub fn render_line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> Result<String> {
    let points: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    if points.is_empty() {
        return Err(Error::invalid("no data points to plot"));
    }
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &points {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    if y_max == y_min {
        y_max = y_min + 1.0;
        y_min -= 1.0;
    }
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = |y: f64| MARGIN_TOP + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h;

    let mut svg = String::new();
    write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    )
    .unwrap();
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    write!(
        svg,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        escape(title)
    )
    .unwrap();

    // axes
    write!(
        svg,
        "<line x1=\"{MARGIN_LEFT}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        MARGIN_TOP + plot_h,
        MARGIN_LEFT + plot_w,
        MARGIN_TOP + plot_h
    )
    .unwrap();
    write!(
        svg,
        "<line x1=\"{MARGIN_LEFT}\" y1=\"{MARGIN_TOP}\" x2=\"{MARGIN_LEFT}\" y2=\"{}\" stroke=\"black\"/>\n",
        MARGIN_TOP + plot_h
    )
    .unwrap();

    for i in 0..=4 {
        let fx = x_min + (x_max - x_min) * i as f64 / 4.0;
        let px = sx(fx);
        write!(
            svg,
            "<line x1=\"{px}\" y1=\"{}\" x2=\"{px}\" y2=\"{}\" stroke=\"black\"/>\n",
            MARGIN_TOP + plot_h,
            MARGIN_TOP + plot_h + 5.0
        )
        .unwrap();
        write!(
            svg,
            "<text x=\"{px}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            MARGIN_TOP + plot_h + 20.0,
            tick(fx)
        )
        .unwrap();

        let fy = y_min + (y_max - y_min) * i as f64 / 4.0;
        let py = sy(fy);
        write!(
            svg,
            "<line x1=\"{}\" y1=\"{py}\" x2=\"{MARGIN_LEFT}\" y2=\"{py}\" stroke=\"black\"/>\n",
            MARGIN_LEFT - 5.0
        )
        .unwrap();
        write!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            MARGIN_LEFT - 9.0,
            py + 4.0,
            tick(fy)
        )
        .unwrap();
    }
    write!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{}</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    )
    .unwrap();
    write!(
        svg,
        "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 18 {})\">{}</text>\n",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape(y_label)
    )
    .unwrap();

    for (i, (name, pts)) in series.iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        write!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            path.join(" ")
        )
        .unwrap();
        let ly = MARGIN_TOP + 16.0 * i as f64;
        write!(
            svg,
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"3\"/>\n",
            WIDTH - MARGIN_RIGHT + 10.0,
            WIDTH - MARGIN_RIGHT + 34.0
        )
        .unwrap();
        write!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            WIDTH - MARGIN_RIGHT + 40.0,
            ly + 4.0,
            escape(name)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e5 || v.abs() < 1e-3 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Chart of eval return vs step, one line per run id (falling back to
/// behavior return for runs that never evaluated).
pub fn plot_metrics(rows: &[MetricsRow]) -> Result<String> {
    let mut eval_series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut behavior_series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for row in rows {
        if let Some(v) = row.eval_return {
            eval_series
                .entry(row.run_id.clone())
                .or_default()
                .push((row.step as f64, v));
        }
        if let Some(v) = row.behavior_return {
            behavior_series
                .entry(row.run_id.clone())
                .or_default()
                .push((row.step as f64, v));
        }
    }
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    let run_ids: Vec<String> = rows
        .iter()
        .map(|r| r.run_id.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    for run_id in run_ids {
        if let Some(pts) = eval_series.remove(&run_id) {
            series.push((run_id, pts));
        } else if let Some(pts) = behavior_series.remove(&run_id) {
            series.push((format!("{run_id} (behavior)"), pts));
        }
    }
    render_line_chart("evaluation return", "step", "return", &series)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_polylines_and_legend() {
        let series = vec![
            ("a".to_string(), vec![(0.0, 1.0), (10.0, 2.0), (20.0, 1.5)]),
            ("b".to_string(), vec![(0.0, -1.0), (20.0, 0.0)]),
        ];
        let svg = render_line_chart("t", "step", "return", &series).unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(">a</text>") && svg.contains(">b</text>"));
    }

    #[test]
    fn empty_series_error() {
        assert!(render_line_chart("t", "x", "y", &[]).is_err());
    }
}
