//! Hand-written SVG output. Coordinates are printed with fixed precision
//! and elements are emitted in input order, so equal inputs give equal bytes.

use std::fmt::Write;

pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

pub struct Doc {
    pub body: String,
    width: f64,
    height: f64,
}

impl Doc {
    pub fn new(width: f64, height: f64) -> Self {
        Self {
            body: String::new(),
            width,
            height,
        }
    }

    pub fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="{size}" text-anchor="{anchor}">{}</text>"#,
            escape(s)
        );
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}"/>"#
        );
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"/>"#
        );
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], stroke: &str, class: &str) {
        let mut pts = String::new();
        for (i, (x, y)) in points.iter().enumerate() {
            if i > 0 {
                pts.push(' ');
            }
            let _ = write!(pts, "{x:.2},{y:.2}");
        }
        let _ = writeln!(
            self.body,
            r#"<polyline class="{class}" fill="none" stroke="{stroke}" stroke-width="1.5" points="{pts}"/>"#
        );
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n{body}</svg>\n",
            w = self.width,
            h = self.height,
            body = self.body
        )
    }
}

pub struct Series<'a> {
    pub name: String,
    pub points: &'a [(f64, f64)],
}

/// Axis ranges `(x0, x1, y0, y1)` spanning all points, padded when flat.
pub fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &(x, y) in s.points {
            b = (b.0.min(x), b.1.max(x), b.2.min(y), b.3.max(y));
        }
    }
    if !b.0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if b.1 - b.0 < 1e-12 {
        b.0 -= 0.5;
        b.1 += 0.5;
    }
    if b.3 - b.2 < 1e-12 {
        b.2 -= 0.5;
        b.3 += 0.5;
    }
    b
}

/// Draws a line chart panel with its top-left corner at `(ox, oy)`.
#[allow(clippy::too_many_arguments)]
pub fn line_panel(
    doc: &mut Doc,
    ox: f64,
    oy: f64,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    range: (f64, f64, f64, f64),
) {
    let (w, h) = (440.0, 260.0);
    let (left, top) = (ox + 60.0, oy + 30.0);
    let (x0, x1, y0, y1) = range;
    let px = |x: f64| left + (x - x0) / (x1 - x0) * w;
    let py = |y: f64| top + h - (y - y0) / (y1 - y0) * h;
    doc.text(left + w / 2.0, oy + 18.0, 14.0, "middle", title);
    doc.line(left, top + h, left + w, top + h, "black");
    doc.line(left, top, left, top + h, "black");
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        doc.line(px(xv), top + h, px(xv), top + h + 4.0, "black");
        doc.text(px(xv), top + h + 16.0, 10.0, "middle", &tick_label(xv));
        doc.line(left - 4.0, py(yv), left, py(yv), "black");
        doc.text(left - 6.0, py(yv) + 3.0, 10.0, "end", &tick_label(yv));
    }
    doc.text(left + w / 2.0, top + h + 32.0, 11.0, "middle", x_label);
    let _ = writeln!(
        doc.body,
        r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
        ox + 16.0,
        top + h / 2.0,
        ox + 16.0,
        top + h / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<(f64, f64)> = s.points.iter().map(|&(x, y)| (px(x), py(y))).collect();
        doc.polyline(&pts, color(i), "series");
        let ly = top + 8.0 + 14.0 * i as f64;
        doc.line(left + w + 8.0, ly, left + w + 22.0, ly, color(i));
        doc.text(left + w + 26.0, ly + 3.0, 10.0, "start", &s.name);
    }
}
