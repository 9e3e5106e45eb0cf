//! Scatter plots of simplex-plane points as standalone SVG.

use std::collections::HashSet;
use std::fmt::Write;

use crate::error::{LabError, LabResult};

const PANEL: f64 = 320.0;
const MARGIN: f64 = 12.0;
const TITLE: f64 = 22.0;
const RADIUS: f64 = 1.1;
const H: f64 = 0.866_025_403_784_438_6;

/// Triangle corners for states 0, 1, 2.
pub const CORNERS: [(f64, f64); 3] = [(0.0, 0.0), (1.0, 0.0), (0.5, H)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub rgb: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub points: Vec<Point>,
}

/// Data-to-pixel map of one panel: equal scale on both axes, the triangle and
/// every point inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub x0: f64,
    pub y0: f64,
    pub scale: f64,
    pub left: f64,
    pub top: f64,
}

impl Frame {
    pub fn fit(points: &[Point], left: f64, top: f64) -> Self {
        let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (0.0f64, 1.0f64, 0.0f64, H);
        for p in points {
            lo_x = lo_x.min(p.x);
            hi_x = hi_x.max(p.x);
            lo_y = lo_y.min(p.y);
            hi_y = hi_y.max(p.y);
        }
        let span = (hi_x - lo_x).max(hi_y - lo_y);
        let scale = (PANEL - 2.0 * MARGIN) / span;
        let x0 = 0.5 * (lo_x + hi_x) - 0.5 * span;
        let y0 = 0.5 * (lo_y + hi_y) - 0.5 * span;
        Self { x0, y0, scale, left, top }
    }

    pub fn pixel(&self, x: f64, y: f64) -> (f64, f64) {
        let px = self.left + MARGIN + (x - self.x0) * self.scale;
        let py = self.top + PANEL - MARGIN - (y - self.y0) * self.scale;
        (px, py)
    }
}

fn hex(rgb: [f64; 3]) -> String {
    let c = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(rgb[0]), c(rgb[1]), c(rgb[2]))
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render_svg(points: &[Point], title: &str) -> LabResult<String> {
    render_panels(&[Panel { title: title.into(), points: points.to_vec() }])
}

/// Panels side by side, left to right. Points that land on the same pixel
/// position with the same color are drawn once.
pub fn render_panels(panels: &[Panel]) -> LabResult<String> {
    if panels.is_empty() {
        return Err(LabError::EmptyFigure("no panels".into()));
    }
    let width = PANEL * panels.len() as f64;
    let height = PANEL + TITLE;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    for (i, panel) in panels.iter().enumerate() {
        if panel.points.is_empty() {
            return Err(LabError::EmptyFigure(format!("panel {:?} has no points", panel.title)));
        }
        if let Some(p) = panel.points.iter().find(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(LabError::format("plot point", format!("({}, {}) is not finite", p.x, p.y)));
        }
        let left = PANEL * i as f64;
        let frame = Frame::fit(&panel.points, left, TITLE);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="16" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
            left + PANEL / 2.0,
            escape(&panel.title)
        );
        let corners: Vec<String> = CORNERS
            .iter()
            .map(|&(x, y)| {
                let (px, py) = frame.pixel(x, y);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let _ = writeln!(s, r#"<polygon points="{}" fill="none" stroke="gray" stroke-width="0.8"/>"#, corners.join(" "));
        let _ = writeln!(s, r#"<g stroke="none">"#);
        let mut seen = HashSet::new();
        for p in &panel.points {
            let (px, py) = frame.pixel(p.x, p.y);
            let circle = format!(r#"<circle cx="{px:.2}" cy="{py:.2}" r="{RADIUS}" fill="{}"/>"#, hex(p.rgb));
            if seen.insert(circle.clone()) {
                s.push_str(&circle);
                s.push('\n');
            }
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centroid() -> Point {
        Point { x: 0.5, y: H / 3.0, rgb: [1.0 / 3.0; 3] }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(render_svg(&[], "t"), Err(LabError::EmptyFigure(_))));
        assert!(matches!(render_panels(&[]), Err(LabError::EmptyFigure(_))));
    }

    #[test]
    fn vertices_land_on_the_frame_corners() {
        let pts: Vec<Point> = CORNERS.iter().map(|&(x, y)| Point { x, y, rgb: [0.0, 0.5, 1.0] }).collect();
        let svg = render_svg(&pts, "v").unwrap();
        assert_eq!(svg.matches("<circle").count(), 3);
        let f = Frame::fit(&pts, 0.0, TITLE);
        for &(x, y) in &CORNERS {
            let (px, py) = f.pixel(x, y);
            assert!(svg.contains(&format!(r#"<circle cx="{px:.2}" cy="{py:.2}""#)));
        }
        assert!(svg.contains("#0080ff"));
    }

    #[test]
    fn centroid_lands_a_third_of_the_way_up() {
        let f = Frame::fit(&[centroid()], 0.0, TITLE);
        let (_, base) = f.pixel(0.5, 0.0);
        let (_, apex) = f.pixel(0.5, H);
        let (cx, cy) = f.pixel(0.5, H / 3.0);
        assert!((cx - f.pixel(0.0, 0.0).0 - (f.pixel(1.0, 0.0).0 - f.pixel(0.0, 0.0).0) / 2.0).abs() < 1e-9);
        assert!((base - cy - (base - apex) / 3.0).abs() < 1e-9);
        let svg = render_svg(&[centroid()], "c").unwrap();
        assert!(svg.contains(&format!(r#"cx="{cx:.2}" cy="{cy:.2}""#)));
    }

    #[test]
    fn points_stay_inside_the_panel() {
        let pts = [Point { x: -3.0, y: 2.0, rgb: [1.0, 0.0, 0.0] }, Point { x: 4.0, y: -1.0, rgb: [0.0, 0.0, 1.0] }];
        let f = Frame::fit(&pts, 0.0, 0.0);
        for p in pts.iter().copied().chain(CORNERS.iter().map(|&(x, y)| Point { x, y, rgb: [0.0; 3] })) {
            let (px, py) = f.pixel(p.x, p.y);
            assert!((0.0..=PANEL).contains(&px) && (0.0..=PANEL).contains(&py));
        }
    }

    #[test]
    fn output_is_deterministic_and_deduplicated() {
        let pts = vec![centroid(); 5];
        let a = render_svg(&pts, "x<y").unwrap();
        assert_eq!(a, render_svg(&pts, "x<y").unwrap());
        assert_eq!(a.matches("<circle").count(), 1);
        assert!(a.contains("x&lt;y"));
    }

    #[test]
    fn non_finite_points_are_rejected() {
        assert!(render_svg(&[Point { x: f64::NAN, y: 0.0, rgb: [0.0; 3] }], "n").is_err());
    }
}
