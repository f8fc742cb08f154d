//! Minimal SVG output: lines, translucent band polygons and axes. Numbers are
//! printed with fixed precision so identical data gives identical files.

use std::fmt::Write;

use topicmeta::composition::Summary;
use topicmeta::diagnostics::KSearchReport;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;
const TICKS: usize = 5;

/// Data-to-pixel mapping for one panel.
struct Frame {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let (lo, hi) = self.x;
        self.left + if hi > lo { (x - lo) / (hi - lo) * self.width } else { self.width / 2.0 }
    }

    fn py(&self, y: f64) -> f64 {
        let (lo, hi) = self.y;
        self.top + self.height - if hi > lo { (y - lo) / (hi - lo) * self.height } else { self.height / 2.0 }
    }

    fn axes(&self, svg: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let (l, t, w, h) = (self.left, self.top, self.width, self.height);
        let _ = writeln!(
            svg,
            r##"<rect x="{l:.2}" y="{t:.2}" width="{w:.2}" height="{h:.2}" fill="none" stroke="#444" stroke-width="1"/>"##
        );
        for i in 0..TICKS {
            let f = i as f64 / (TICKS - 1) as f64;
            let xv = self.x.0 + f * (self.x.1 - self.x.0);
            let yv = self.y.0 + f * (self.y.1 - self.y.0);
            let (xp, yp) = (self.px(xv), self.py(yv));
            let _ = writeln!(
                svg,
                r##"<line x1="{xp:.2}" y1="{:.2}" x2="{xp:.2}" y2="{:.2}" stroke="#444"/><text x="{xp:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                t + h,
                t + h + 5.0,
                t + h + 18.0,
                tick_label(xv)
            );
            let _ = writeln!(
                svg,
                r##"<line x1="{:.2}" y1="{yp:.2}" x2="{l:.2}" y2="{yp:.2}" stroke="#444"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                l - 5.0,
                l - 8.0,
                yp + 4.0,
                tick_label(yv)
            );
        }
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-weight="bold">{}</text>"#, l + w / 2.0, t - 10.0, escape(title));
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, l + w / 2.0, t + h + 36.0, escape(xlabel));
        let (yx, yy) = (l - 44.0, t + h / 2.0);
        let _ = writeln!(
            svg,
            r#"<text x="{yx:.2}" y="{yy:.2}" text-anchor="middle" transform="rotate(-90 {yx:.2} {yy:.2})">{}</text>"#,
            escape(ylabel)
        );
    }

    fn polyline(&self, svg: &mut String, xs: &[f64], ys: &[f64], color: &str) {
        let pts: Vec<String> = xs.iter().zip(ys).map(|(&x, &y)| format!("{:.2},{:.2}", self.px(x), self.py(y))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
    }
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".to_owned() } else { s.to_owned() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Finite range padded by 5%; a degenerate range is widened to unit width.
fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= 0.0 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Mean curve with one shaded band per level, widest drawn first, and a
/// dashed zero line whenever zero lies inside the plotted range.
pub fn effect_svg(summary: &Summary, focal: &str) -> String {
    let xs: Vec<f64> = summary.rows.iter().map(|r| r.grid_value).collect();
    let all = summary.rows.iter().flat_map(|r| r.bands.iter().flat_map(|b| [b.lower, b.upper]).chain([r.mean]));
    let frame = Frame {
        left: MARGIN + 10.0,
        top: MARGIN * 0.6,
        width: WIDTH - 1.6 * MARGIN,
        height: HEIGHT - 1.8 * MARGIN,
        x: padded_range(xs.iter().copied()),
        y: padded_range(all),
    };
    let mut svg = header(WIDTH, HEIGHT);
    let mut order: Vec<usize> = (0..summary.levels.len()).collect();
    order.sort_by(|&a, &b| summary.levels[b].total_cmp(&summary.levels[a]));
    for &i in &order {
        let mut pts: Vec<String> = summary.rows.iter().map(|r| format!("{:.2},{:.2}", frame.px(r.grid_value), frame.py(r.bands[i].upper))).collect();
        pts.extend(summary.rows.iter().rev().map(|r| format!("{:.2},{:.2}", frame.px(r.grid_value), frame.py(r.bands[i].lower))));
        let _ = writeln!(
            svg,
            r##"<polygon points="{}" fill="#3465a4" fill-opacity="0.18" stroke="none"><title>{:.0}% band</title></polygon>"##,
            pts.join(" "),
            summary.levels[i] * 100.0
        );
    }
    if frame.y.0 < 0.0 && frame.y.1 > 0.0 {
        let y0 = frame.py(0.0);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{y0:.2}" x2="{:.2}" y2="{y0:.2}" stroke="#cc0000" stroke-dasharray="4 3"/>"##,
            frame.left,
            frame.left + frame.width
        );
    }
    let means: Vec<f64> = summary.rows.iter().map(|r| r.mean).collect();
    frame.polyline(&mut svg, &xs, &means, "#204a87");
    let title = format!("Topic {} ({})", summary.topic, summary.method);
    frame.axes(&mut svg, &title, focal, "topic proportion");
    svg.push_str("</svg>\n");
    svg
}

/// Four panels (held-out likelihood, coherence, exclusivity, dispersion)
/// against K. Failed K values are left out of the lines.
pub fn searchk_svg(report: &KSearchReport) -> String {
    let (w, h) = (2.0 * WIDTH * 0.75, 2.0 * HEIGHT * 0.75);
    let mut svg = header(w, h);
    let ks: Vec<f64> = report.rows.iter().map(|r| r.k as f64).collect();
    let panels: [(&str, Vec<f64>); 4] = [
        ("Held-out likelihood", report.rows.iter().map(|r| r.heldout).collect()),
        ("Semantic coherence", report.rows.iter().map(|r| r.coherence_mean).collect()),
        ("Exclusivity", report.rows.iter().map(|r| r.exclusivity_mean).collect()),
        ("Residual dispersion", report.rows.iter().map(|r| r.dispersion).collect()),
    ];
    let (pw, ph) = (w / 2.0, h / 2.0);
    for (i, (title, ys)) in panels.iter().enumerate() {
        let frame = Frame {
            left: (i % 2) as f64 * pw + MARGIN + 6.0,
            top: (i / 2) as f64 * ph + MARGIN * 0.5,
            width: pw - 1.5 * MARGIN,
            height: ph - 1.4 * MARGIN,
            x: padded_range(ks.iter().copied()),
            y: padded_range(ys.iter().copied()),
        };
        // split at missing values so gaps stay visible
        let mut run_x = Vec::new();
        let mut run_y = Vec::new();
        for (&k, &y) in ks.iter().zip(ys) {
            if y.is_finite() {
                run_x.push(k);
                run_y.push(y);
                let _ = writeln!(svg, r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#204a87"/>"##, frame.px(k), frame.py(y));
            } else if !run_x.is_empty() {
                frame.polyline(&mut svg, &run_x, &run_y, "#204a87");
                run_x.clear();
                run_y.clear();
            }
        }
        if !run_x.is_empty() {
            frame.polyline(&mut svg, &run_x, &run_y, "#204a87");
        }
        frame.axes(&mut svg, title, "K", "");
    }
    svg.push_str("</svg>\n");
    svg
}
