//! Minimal static SVG charts: scatter, polyline, histogram.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD_L: f64 = 64.0;
const PAD_R: f64 = 20.0;
const PAD_T: f64 = 36.0;
const PAD_B: f64 = 52.0;

#[derive(Debug, Clone)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
}

impl Chart {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Chart { title: title.into(), x_label: x_label.into(), y_label: y_label.into() }
    }
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(points: &[(f64, f64)]) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        };
        let (x0, x1) = span(&mut points.iter().map(|p| p.0));
        let (y0, y1) = span(&mut points.iter().map(|p| p.1));
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        PAD_L + (x - self.x0) / (self.x1 - self.x0) * (W - PAD_L - PAD_R)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD_B - (y - self.y0) / (self.y1 - self.y0) * (H - PAD_T - PAD_B)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(chart: &Chart, frame: &Frame) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(&chart.title));
    let (l, r, t, b) = (PAD_L, W - PAD_R, PAD_T, H - PAD_B);
    let _ = writeln!(s, r#"<path d="M{l},{t} L{l},{b} L{r},{b}" fill="none" stroke="black"/>"#);
    for (x, anchor) in [(frame.x0, "start"), (frame.x1, "end")] {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="{anchor}">{:.4}</text>"#, frame.px(x), b + 16.0, x);
    }
    for y in [frame.y0, frame.y1] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{:.4}</text>"#, l - 6.0, frame.py(y) + 4.0, y);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (l + r) / 2.0, H - 12.0, escape(&chart.x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0,
        escape(&chart.y_label)
    );
    s
}

pub fn scatter(chart: &Chart, points: &[(f64, f64)]) -> String {
    let frame = Frame::fit(points);
    let mut s = open(chart, &frame);
    s.push_str(r##"<g fill="#1f77b4" fill-opacity="0.5">"##);
    s.push('\n');
    for &(x, y) in points {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2"/>"#, frame.px(x), frame.py(y));
    }
    s.push_str("</g>\n</svg>\n");
    s
}

pub fn line(chart: &Chart, points: &[(f64, f64)]) -> String {
    let frame = Frame::fit(points);
    let mut s = open(chart, &frame);
    let path: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y))).collect();
    let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#d62728" stroke-width="1.5"/>"##, path.join(" "));
    for &(x, y) in points {
        let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="#d62728"/>"##, frame.px(x), frame.py(y));
    }
    s.push_str("</svg>\n");
    s
}

/// Fixed-width bins over `[lo, hi]`.
pub fn histogram(chart: &Chart, values: &[f64], bins: usize, lo: f64, hi: f64) -> String {
    let bins = bins.max(1);
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / (hi - lo)) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize;
        counts[b] += 1;
    }
    let max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let frame = Frame { x0: lo, x1: hi, y0: 0.0, y1: max };
    let mut s = open(chart, &frame);
    let width = (hi - lo) / bins as f64;
    for (i, &c) in counts.iter().enumerate() {
        let (xa, xb) = (frame.px(lo + i as f64 * width), frame.px(lo + (i + 1) as f64 * width));
        let (ya, yb) = (frame.py(c as f64), frame.py(0.0));
        let _ = writeln!(
            s,
            r##"<rect x="{xa:.2}" y="{ya:.2}" width="{:.2}" height="{:.2}" fill="#2ca02c" stroke="white"/>"##,
            xb - xa,
            yb - ya
        );
    }
    s.push_str("</svg>\n");
    s
}
