//! Minimal SVG line chart of recall curves.

use std::fmt::Write as _;

use crate::commands::LabelledCurve;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Recall (y, 0..1) against cut-off M (x). All curves share the same cut-offs.
pub fn recall_svg(curves: &[LabelledCurve]) -> String {
    let ms = &curves[0].ms;
    let (lo, hi) = (ms[0] as f64, *ms.last().unwrap() as f64);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let x = |m: usize| MARGIN + (m as f64 - lo) / span * (WIDTH - 2.0 * MARGIN);
    let y = |r: f64| HEIGHT - MARGIN - r.clamp(0.0, 1.0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#);
    for &m in ms {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{m}</text>"#, x(m), y0 + 18.0);
    }
    for k in 0..=5 {
        let r = k as f64 / 5.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{r:.1}</text>"#, x0 - 6.0, y(r) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">M</text>"#, WIDTH / 2.0, HEIGHT - 10.0);
    let _ = writeln!(s, r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">Recall@M</text>"#, HEIGHT / 2.0, HEIGHT / 2.0);
    for (i, c) in curves.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        let points: Vec<String> = c.ms.iter().zip(&c.recalls).map(|(&m, &r)| format!("{:.1},{:.1}", x(m), y(r))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#, points.join(" "));
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}" fill="{colour}">{}</text>"#, x0 + 10.0, escape(&c.label));
    }
    s.push_str("</svg>\n");
    s
}
