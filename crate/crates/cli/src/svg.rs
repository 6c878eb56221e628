//! Minimal SVG 1.1 figures: ROC curves, a box plot and a per-slice PSL view.

use std::fmt::Write;

use psl_core::lobularity::SliceTrace;
use psl_core::stats::quantile_sorted;

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const SIZE: f64 = 480.0;
const MARGIN: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(out: &mut String, width: f64, height: f64) {
    writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">
<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#
    )
    .unwrap();
}

/// Unit-square axes with ticks every 0.2. Returns the data-to-pixel map.
fn unit_axes(out: &mut String, x_label: &str, y_label: &str) -> impl Fn(f64, f64) -> (f64, f64) {
    let px = |x: f64, y: f64| (MARGIN + x * SIZE, MARGIN + (1.0 - y) * SIZE);
    let (x0, y0) = px(0.0, 0.0);
    let (x1, y1) = px(1.0, 1.0);
    writeln!(out, r#"<rect x="{x0}" y="{y1}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#).unwrap();
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let (tx, _) = px(v, 0.0);
        let (_, ty) = px(0.0, v);
        writeln!(
            out,
            r#"<line x1="{tx:.1}" y1="{y0}" x2="{tx:.1}" y2="{:.1}" stroke="black"/><text x="{tx:.1}" y="{:.1}" font-size="12" text-anchor="middle">{v:.1}</text>"#,
            y0 + 5.0,
            y0 + 20.0
        )
        .unwrap();
        writeln!(
            out,
            r#"<line x1="{x0}" y1="{ty:.1}" x2="{:.1}" y2="{ty:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" font-size="12" text-anchor="end">{v:.1}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            ty + 4.0
        )
        .unwrap();
    }
    writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="14" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        y0 + 42.0,
        escape(x_label)
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="14" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
        x0 - 42.0,
        (y0 + y1) / 2.0,
        x0 - 42.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    )
    .unwrap();
    px
}

pub struct RocSeries {
    pub label: String,
    pub auc: f64,
    /// `(fpr, tpr)` in threshold order.
    pub points: Vec<(f64, f64)>,
}

pub fn roc_plot(series: &[RocSeries]) -> String {
    let mut out = String::new();
    let full = SIZE + 2.0 * MARGIN;
    header(&mut out, full, full);
    let px = unit_axes(&mut out, "1 - specificity", "sensitivity");
    let (a, b) = (px(0.0, 0.0), px(1.0, 1.0));
    writeln!(
        out,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999999" stroke-dasharray="4 4"/>"##,
        a.0, a.1, b.0, b.1
    )
    .unwrap();
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| {
                let (u, v) = px(x, y);
                format!("{u:.2},{v:.2}")
            })
            .collect();
        writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" ")).unwrap();
        let (lx, ly) = px(0.45, 0.25 - 0.06 * i as f64);
        writeln!(
            out,
            r#"<line x1="{lx:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{ly:.1}" font-size="13">{} (AUC {:.3})</text>"#,
            ly - 4.0,
            lx + 24.0,
            ly - 4.0,
            lx + 30.0,
            escape(&s.label),
            s.auc
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Box plot with Tukey whiskers (1.5 IQR) and outliers drawn as circles.
pub fn box_plot(title: &str, y_label: &str, groups: &[(String, Vec<f64>)]) -> String {
    let mut out = String::new();
    let width = 2.0 * MARGIN + 160.0 * groups.len().max(1) as f64;
    let height = SIZE + 2.0 * MARGIN;
    header(&mut out, width, height);
    let all: Vec<f64> = groups.iter().flat_map(|g| g.1.iter().copied()).collect();
    let (mut lo, mut hi) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        hi = lo + 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let py = |v: f64| MARGIN + (hi - v) / (hi - lo) * SIZE;

    writeln!(
        out,
        r#"<text x="{:.1}" y="30" font-size="15" text-anchor="middle">{}</text>"#,
        width / 2.0,
        escape(title)
    )
    .unwrap();
    writeln!(out, r#"<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{:.1}" stroke="black"/>"#, MARGIN + SIZE).unwrap();
    for i in 0..=5 {
        let v = lo + (hi - lo) * i as f64 / 5.0;
        writeln!(
            out,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{MARGIN}" y2="{:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" font-size="12" text-anchor="end">{v:.2}</text>"#,
            MARGIN - 5.0,
            py(v),
            py(v),
            MARGIN - 8.0,
            py(v) + 4.0
        )
        .unwrap();
    }
    writeln!(
        out,
        r#"<text x="16" y="{:.1}" font-size="14" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        height / 2.0,
        height / 2.0,
        escape(y_label)
    )
    .unwrap();

    for (i, (name, values)) in groups.iter().enumerate() {
        let cx = MARGIN + 80.0 + 160.0 * i as f64;
        let color = COLORS[i % COLORS.len()];
        writeln!(
            out,
            r#"<text x="{cx:.1}" y="{:.1}" font-size="13" text-anchor="middle">{} (n={})</text>"#,
            MARGIN + SIZE + 25.0,
            escape(name),
            values.len()
        )
        .unwrap();
        if values.is_empty() {
            continue;
        }
        let mut v = values.clone();
        v.sort_by(f64::total_cmp);
        let (q1, med, q3) = (quantile_sorted(&v, 0.25), quantile_sorted(&v, 0.5), quantile_sorted(&v, 0.75));
        let iqr = q3 - q1;
        let low = v.iter().copied().find(|&x| x >= q1 - 1.5 * iqr).unwrap_or(q1);
        let high = v.iter().rev().copied().find(|&x| x <= q3 + 1.5 * iqr).unwrap_or(q3);
        let half = 40.0;
        writeln!(
            out,
            r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/><line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
            py(high),
            py(q3),
            py(q1),
            py(low)
        )
        .unwrap();
        writeln!(
            out,
            r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{color}" fill-opacity="0.35" stroke="black"/><line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black" stroke-width="2"/>"#,
            cx - half,
            py(q3),
            2.0 * half,
            (py(q1) - py(q3)).max(0.5),
            cx - half,
            py(med),
            cx + half,
            py(med)
        )
        .unwrap();
        for &x in v.iter().filter(|&&x| x < low || x > high) {
            writeln!(out, r#"<circle cx="{cx:.1}" cy="{:.1}" r="3" fill="none" stroke="black"/>"#, py(x)).unwrap();
        }
    }
    out.push_str("</svg>\n");
    out
}

/// The pancreas pixels of one slice with the detected surface (cyan) and
/// the fitted quartic (magenta), in mm relative to the ray origin.
pub fn slice_debug(trace: &SliceTrace, pixels: &[[usize; 2]], spacing: (f64, f64)) -> String {
    let (sx, sy) = spacing;
    let origin = trace.curve.origin;
    let to_mm = |p: [usize; 2]| ((p[1] as f64 - origin[1] as f64) * sx, (p[0] as f64 - origin[0] as f64) * sy);
    let mm: Vec<(f64, f64)> = pixels.iter().map(|&p| to_mm(p)).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in mm.iter().chain(trace.curve.points.iter().map(|p| (p[0], p[1])).collect::<Vec<_>>().iter()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let scale = 8.0;
    let pad = 2.0;
    let (x0, y0) = (x0 - pad, y0 - pad);
    let (width, height) = ((x1 + pad - x0) * scale, (y1 + pad - y0) * scale + 30.0);
    let px = |x: f64, y: f64| ((x - x0) * scale, (y - y0) * scale + 30.0);

    let mut out = String::new();
    header(&mut out, width.ceil(), height.ceil());
    writeln!(
        out,
        r#"<text x="8" y="20" font-size="14">slice z={} score={:.3}</text>"#,
        trace.z, trace.score
    )
    .unwrap();
    for &(x, y) in &mm {
        let (u, v) = px(x - sx / 2.0, y - sy / 2.0);
        writeln!(
            out,
            r##"<rect x="{u:.2}" y="{v:.2}" width="{:.2}" height="{:.2}" fill="#bbbbbb"/>"##,
            sx * scale,
            sy * scale
        )
        .unwrap();
    }
    let surface: Vec<String> = trace
        .curve
        .points
        .iter()
        .map(|p| {
            let (u, v) = px(p[0], p[1]);
            format!("{u:.2},{v:.2}")
        })
        .collect();
    writeln!(out, r##"<polyline points="{}" fill="none" stroke="#00bcd4" stroke-width="2"/>"##, surface.join(" ")).unwrap();
    let (lo, hi) = trace
        .curve
        .points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p[0]), h.max(p[0])));
    let fit: Vec<String> = (0..=200)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / 200.0;
            let (u, v) = px(x, trace.fit.evaluate(x));
            format!("{u:.2},{v:.2}")
        })
        .collect();
    writeln!(out, r##"<polyline points="{}" fill="none" stroke="#e91e63" stroke-width="2"/>"##, fit.join(" ")).unwrap();
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roc_plot_has_one_polyline_per_series() {
        let series = vec![
            RocSeries {
                label: "a<b".into(),
                auc: 0.75,
                points: vec![(0.0, 0.0), (0.5, 1.0), (1.0, 1.0)],
            },
            RocSeries {
                label: "c".into(),
                auc: 0.5,
                points: vec![(0.0, 0.0), (1.0, 1.0)],
            },
        ];
        let svg = roc_plot(&series);
        assert!(svg.starts_with("<?xml"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a&lt;b (AUC 0.750)"));
    }

    #[test]
    fn box_plot_handles_empty_and_constant_groups() {
        let svg = box_plot("t", "y", &[("none".into(), vec![]), ("flat".into(), vec![2.0; 5])]);
        assert!(svg.contains("flat (n=5)"));
        assert!(!svg.contains("NaN"));
    }
}
