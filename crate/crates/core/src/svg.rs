//! Static SVG plots of a scenario's planar projection.

use std::fmt::Write;

use crate::bounds::Bounds;
use crate::scenario::Scenario;

const WIDTH: f64 = 800.0;
const MARGIN: f64 = 20.0;
const COLORS: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

struct Frame {
    x0: f64,
    y1: f64,
    scale: f64,
}

impl Frame {
    fn x(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) * self.scale
    }

    fn y(&self, y: f64) -> f64 {
        MARGIN + (self.y1 - y) * self.scale
    }
}

fn rect(out: &mut String, f: &Frame, b: &Bounds, style: &str) {
    let _ = writeln!(
        out,
        r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" {style}/>"#,
        f.x(b.lower[0]),
        f.y(b.upper[1]),
        (b.upper[0] - b.lower[0]) * f.scale,
        (b.upper[1] - b.lower[1]) * f.scale,
    );
}

/// Domain, obstacles (dark), targets (light, depot green) and one polyline
/// per track in the first two state coordinates.
pub fn render(scenario: &Scenario, tracks: &[Vec<(f64, f64)>]) -> String {
    let domain = scenario.grid.domain();
    let (w, h) = (domain.width(0), domain.width(1));
    let scale = (WIDTH - 2.0 * MARGIN) / w;
    let f = Frame { x0: domain.lower[0], y1: domain.upper[1], scale };
    let height = h * scale + 2.0 * MARGIN;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{height:.0}" viewBox="0 0 {WIDTH:.0} {height:.0}">"#
    );
    let _ = writeln!(out, "<title>{}</title>", escape(&scenario.name));
    rect(&mut out, &f, domain, r##"fill="#ffffff" stroke="#000000" stroke-width="1""##);
    out.push_str("<g id=\"obstacles\">\n");
    for b in scenario.cost.obstacles.iter().chain(&scenario.cost.nofly) {
        rect(&mut out, &f, b, r##"fill="#404040""##);
    }
    out.push_str("</g>\n<g id=\"targets\">\n");
    for (i, t) in scenario.targets.iter().enumerate() {
        let style = if i == 0 {
            r##"fill="#c7e9c0" stroke="#238b45""##
        } else {
            r##"fill="#c6dbef" stroke="#2171b5""##
        };
        rect(&mut out, &f, &t.bounds, style);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" font-family="sans-serif">{}</text>"#,
            f.x(t.bounds.lower[0]) + 2.0,
            f.y(t.bounds.upper[1]) + 12.0,
            escape(&t.name)
        );
    }
    out.push_str("</g>\n<g id=\"trajectories\">\n");
    for (k, track) in tracks.iter().enumerate() {
        if track.is_empty() {
            continue;
        }
        let points: Vec<String> = track.iter().map(|&(x, y)| format!("{:.2},{:.2}", f.x(x), f.y(y))).collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            points.join(" "),
            COLORS[k % COLORS.len()]
        );
    }
    out.push_str("</g>\n</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
