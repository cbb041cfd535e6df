//! Static SVG figures: route maps, single-edge planner overlays and
//! discovery-rate bar charts.

use std::fmt::Write;

use uavmon::sim::{AugmentedRoute, EdgeComparison, FlownRoute, Method, Scenario};
use uavmon::spline::polyline_of;
use uavmon::{Domain, Point2};

use crate::report::Summary;

const SIZE: f64 = 600.0;
const PAD: f64 = 30.0;

fn method_color(m: Method) -> &'static str {
    match m {
        Method::Optimized => "#1f77b4",
        Method::Lawnmower => "#ff7f0e",
        Method::Straight => "#2ca02c",
        Method::Original => "#7f7f7f",
        Method::NodeCvt => "#9467bd",
        Method::EdgeCvt => "#d62728",
    }
}

/// Maps domain coordinates onto a square canvas with north up.
struct Frame {
    d: Domain,
    scale: f64,
}

impl Frame {
    fn new(d: Domain) -> Self {
        let scale = (SIZE - 2.0 * PAD) / d.width().max(d.height());
        Self { d, scale }
    }

    fn x(&self, x: f64) -> f64 {
        PAD + (x - self.d.x_min) * self.scale
    }

    fn y(&self, y: f64) -> f64 {
        PAD + (self.d.y_max - y) * self.scale
    }

    fn open(&self, s: &mut String, title: &str) {
        let _ = write!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{h}" viewBox="0 0 {SIZE} {h}" font-family="sans-serif" font-size="12">"#,
            h = SIZE + 20.0
        );
        let _ = write!(s, r#"<text x="{PAD}" y="18">{}</text>"#, escape(title));
    }

    fn border(&self, s: &mut String) {
        let _ = write!(
            s,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            self.x(self.d.x_min),
            self.y(self.d.y_max),
            self.d.width() * self.scale,
            self.d.height() * self.scale
        );
    }

    fn polyline(&self, s: &mut String, pts: &[Point2], color: &str, width: f64, dash: Option<&str>) {
        let mut d = String::new();
        for p in pts {
            let _ = write!(d, "{:.2},{:.2} ", self.x(p.x), self.y(p.y));
        }
        let dash = dash.map(|v| format!(r#" stroke-dasharray="{v}""#)).unwrap_or_default();
        let _ = write!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}"{dash}/>"#,
            d.trim_end()
        );
    }

    fn dot(&self, s: &mut String, p: Point2, r: f64, fill: &str) {
        let _ = write!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{r}" fill="{fill}" stroke="black" stroke-width="0.5"/>"#,
            self.x(p.x),
            self.y(p.y)
        );
    }

    fn square(&self, s: &mut String, p: Point2, half: f64, fill: &str) {
        let _ = write!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{}" height="{}" fill="{fill}" stroke="black"/>"#,
            self.x(p.x) - half,
            self.y(p.y) - half,
            2.0 * half,
            2.0 * half
        );
    }
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn legend(s: &mut String, items: &[(&str, &str)]) {
    let y = SIZE + 8.0;
    let mut x = PAD;
    for (label, color) in items {
        let _ = write!(
            s,
            r#"<rect x="{x}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
            y - 9.0,
            x + 14.0,
            y,
            escape(label)
        );
        x += 34.0 + 7.0 * label.chars().count() as f64;
    }
}

/// Colour ramp from dark blue (0) through teal to yellow (1).
fn ramp(v: f64) -> String {
    const STOPS: [(f64, [f64; 3]); 4] = [
        (0.0, [68.0, 1.0, 84.0]),
        (0.35, [49.0, 104.0, 142.0]),
        (0.7, [53.0, 183.0, 121.0]),
        (1.0, [253.0, 231.0, 37.0]),
    ];
    let v = v.clamp(0.0, 1.0);
    let i = STOPS
        .iter()
        .rposition(|(t, _)| *t <= v)
        .unwrap_or(0)
        .min(STOPS.len() - 2);
    let (t0, c0) = STOPS[i];
    let (t1, c1) = STOPS[i + 1];
    let f = (v - t0) / (t1 - t0);
    let c: Vec<u8> = (0..3).map(|k| (c0[k] + f * (c1[k] - c0[k])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Baseline and augmented routes with the flown paths, when given.
pub fn route_figure(
    scenario: &Scenario,
    original: &uavmon::routing::Route,
    augmented: Option<&AugmentedRoute>,
    flown: &[FlownRoute],
    title: &str,
) -> String {
    let f = Frame::new(scenario.domain);
    let mut s = String::new();
    f.open(&mut s, title);
    f.border(&mut s);
    for t in original.tours() {
        let pts: Vec<Point2> = t.iter().map(|&i| original.position(i)).collect();
        f.polyline(&mut s, &pts, method_color(Method::Original), 1.5, Some("6 4"));
    }
    if let Some(a) = augmented {
        for t in a.route.tours() {
            let pts: Vec<Point2> = t.iter().map(|&i| a.route.position(i)).collect();
            f.polyline(&mut s, &pts, method_color(Method::EdgeCvt), 1.5, None);
        }
    }
    for fr in flown {
        for p in fr.paths.iter().flatten() {
            f.polyline(&mut s, &polyline_of(p, 200), method_color(fr.method), 1.0, None);
        }
    }
    let found: Vec<bool> = flown
        .first()
        .map(|fr| fr.discovered.clone())
        .unwrap_or_else(|| vec![false; scenario.unknown.len()]);
    for (h, d) in scenario.unknown.iter().zip(found) {
        f.dot(&mut s, *h, 3.0, if d { "magenta" } else { "cyan" });
    }
    for k in &scenario.known {
        f.dot(&mut s, *k, 5.0, "red");
    }
    if let Some(a) = augmented {
        for p in &a.pseudo {
            f.square(&mut s, *p, 4.0, "orange");
        }
    }
    f.square(&mut s, scenario.depot, 6.0, "black");
    let mut items = vec![("original", method_color(Method::Original))];
    if augmented.is_some() {
        items.push(("edge-cvt", method_color(Method::EdgeCvt)));
    }
    for fr in flown {
        items.push((fr.method.label(), method_color(fr.method)));
    }
    if !flown.is_empty() {
        items.push(("found", "magenta"));
        items.push(("missed", "cyan"));
    }
    legend(&mut s, &items);
    s.push_str("</svg>\n");
    s
}

/// The three planners on one edge over the posterior before the edge is flown.
pub fn edge_figure(scenario: &Scenario, cmp: &EdgeComparison, resolution: usize) -> String {
    let f = Frame::new(scenario.domain);
    let mut s = String::new();
    f.open(&mut s, &format!("edge {}: posterior before planning", cmp.edge));
    let d = scenario.domain;
    let (dx, dy) = (d.width() / resolution as f64, d.height() / resolution as f64);
    for iy in 0..resolution {
        for ix in 0..resolution {
            let c = Point2::new(d.x_min + (ix as f64 + 0.5) * dx, d.y_min + (iy as f64 + 0.5) * dy);
            let v = cmp.problem.field.posterior(c).unwrap_or(0.0);
            let _ = write!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                f.x(c.x - 0.5 * dx),
                f.y(c.y + 0.5 * dy),
                dx * f.scale + 0.3,
                dy * f.scale + 0.3,
                ramp(v)
            );
        }
    }
    f.border(&mut s);
    for g in &cmp.problem.grid {
        let _ = write!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="1" fill="white" opacity="0.6"/>"#,
            f.x(g.x),
            f.y(g.y)
        );
    }
    for (m, path, _) in &cmp.paths {
        f.polyline(&mut s, &polyline_of(path, 400), method_color(*m), 2.0, None);
    }
    for k in &scenario.known {
        f.dot(&mut s, *k, 5.0, "red");
    }
    f.dot(&mut s, cmp.problem.start, 4.0, "white");
    f.dot(&mut s, cmp.problem.end, 4.0, "white");
    let labels: Vec<String> = cmp.paths.iter().map(|(m, _, g)| format!("{m} {g:.4}")).collect();
    let items: Vec<(&str, &str)> = cmp
        .paths
        .iter()
        .zip(&labels)
        .map(|((m, _, _), l)| (l.as_str(), method_color(*m)))
        .collect();
    legend(&mut s, &items);
    s.push_str("</svg>\n");
    s
}

/// Mean discovery rate with one-standard-deviation whiskers, one panel per
/// known-node cell and one bar group per pseudo-node cell.
pub fn discovery_figure(summary: &Summary, methods: &[Method]) -> Option<String> {
    let methods: Vec<Method> = methods.iter().copied().filter(|m| m.is_path()).collect();
    if methods.is_empty() {
        return None;
    }
    let mut known: Vec<Option<usize>> = Vec::new();
    let mut pseudo: Vec<Option<usize>> = Vec::new();
    for c in &summary.cells {
        if !known.contains(&c.known) {
            known.push(c.known);
        }
        if !pseudo.contains(&c.pseudo) {
            pseudo.push(c.pseudo);
        }
    }
    let panel_w = 260.0;
    let panel_h = 220.0;
    let (w, h) = (40.0 + panel_w * known.len() as f64, panel_h + 80.0);
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let base = 30.0 + panel_h;
    for (pi, k) in known.iter().enumerate() {
        let x0 = 40.0 + pi as f64 * panel_w;
        let title = k.map_or("known nodes drawn per trial".to_string(), |v| {
            format!("{v} known nodes")
        });
        let _ = write!(s, r#"<text x="{}" y="20">{title}</text>"#, x0 + 10.0);
        let _ = write!(
            s,
            r#"<line x1="{x0}" y1="{base}" x2="{}" y2="{base}" stroke="black"/><line x1="{x0}" y1="30" x2="{x0}" y2="{base}" stroke="black"/>"#,
            x0 + panel_w - 20.0
        );
        for tick in 0..=5 {
            let v = tick as f64 * 0.2;
            let y = base - v * panel_h;
            let _ = write!(
                s,
                r#"<line x1="{}" y1="{y}" x2="{x0}" y2="{y}" stroke="black"/><text x="{}" y="{}" font-size="9">{v:.1}</text>"#,
                x0 - 3.0,
                x0 - 24.0,
                y + 3.0
            );
        }
        let group_w = (panel_w - 30.0) / pseudo.len() as f64;
        let bar_w = group_w / (methods.len() as f64 + 1.0);
        for (gi, p) in pseudo.iter().enumerate() {
            let gx = x0 + 5.0 + gi as f64 * group_w;
            let label = p.map_or("drawn".to_string(), |v| v.to_string());
            let _ = write!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{label}</text>"#,
                gx + 0.5 * group_w,
                base + 15.0
            );
            for (mi, m) in methods.iter().enumerate() {
                let Some(stat) = summary.cell(*m, *k, *p).and_then(|c| c.discovery_rate) else {
                    continue;
                };
                let bx = gx + (mi as f64 + 0.5) * bar_w;
                let top = base - stat.mean.clamp(0.0, 1.0) * panel_h;
                let _ = write!(
                    s,
                    r#"<rect x="{bx:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                    bar_w * 0.9,
                    base - top,
                    method_color(*m)
                );
                let cx = bx + 0.45 * bar_w;
                let (lo, hi) = (
                    base - (stat.mean - stat.std).clamp(0.0, 1.0) * panel_h,
                    base - (stat.mean + stat.std).clamp(0.0, 1.0) * panel_h,
                );
                let _ = write!(
                    s,
                    r#"<line x1="{cx:.2}" y1="{lo:.2}" x2="{cx:.2}" y2="{hi:.2}" stroke="black"/>"#
                );
            }
        }
    }
    let _ = write!(
        s,
        r#"<text x="40" y="{}">pseudo-nodes; bars: mean discovery rate, whiskers: one standard deviation</text>"#,
        base + 35.0
    );
    for (i, m) in methods.iter().enumerate() {
        let x = 40.0 + 110.0 * i as f64;
        let y = base + 55.0;
        let _ = write!(
            s,
            r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{y}">{m}</text>"#,
            y - 9.0,
            method_color(*m),
            x + 14.0
        );
    }
    s.push_str("</svg>\n");
    Some(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_end_points() {
        assert_eq!(ramp(0.0), "#440154");
        assert_eq!(ramp(1.0), "#fde725");
        assert_eq!(ramp(2.0), ramp(1.0));
    }

    #[test]
    fn frame_flips_y() {
        let f = Frame::new(Domain::square(1000.0).unwrap());
        assert_eq!(f.x(0.0), PAD);
        assert_eq!(f.y(1000.0), PAD);
        assert!((f.y(0.0) - (SIZE - PAD)).abs() < 1e-9);
    }
}
