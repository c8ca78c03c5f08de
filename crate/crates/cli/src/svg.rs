//! Minimal SVG writers for scatter plots and region maps.

use std::fmt::Write;

use letsne::RegionMap;

pub const CANVAS: f64 = 800.0;
pub const MARGIN: f64 = 0.05 * CANVAS;

pub const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#393b79", "#ad494a",
];
const UNLABELLED: &str = "#c7c7c7";

pub fn color(class: Option<usize>) -> &'static str {
    class.map_or(UNLABELLED, |c| PALETTE[c % PALETTE.len()])
}

/// Linear map of `[lo, hi]` onto `[MARGIN, CANVAS − MARGIN]`; a degenerate
/// range maps to the center.
pub fn to_viewport(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        MARGIN + (v - lo) / (hi - lo) * (CANVAS - 2.0 * MARGIN)
    } else {
        CANVAS / 2.0
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// One circle per point, colored by its class. The y axis points up.
pub fn scatter(points: &[(f64, f64)], classes: &[Option<usize>], radius: f64) -> String {
    let (x0, x1) = bounds(points.iter().map(|p| p.0));
    let (y0, y1) = bounds(points.iter().map(|p| p.1));
    let mut s = String::new();
    header(&mut s, CANVAS, CANVAS);
    for (&(x, y), &class) in points.iter().zip(classes) {
        let cx = to_viewport(x, x0, x1);
        let cy = CANVAS - to_viewport(y, y0, y1);
        let _ = writeln!(
            s,
            r#"<circle cx="{cx:.3}" cy="{cy:.3}" r="{radius}" fill="{}"/>"#,
            color(class)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One flat-colored square per pixel.
pub fn region_map(regions: &RegionMap) -> String {
    let (h, w) = (regions.height(), regions.width());
    let cell = (CANVAS / h.max(w) as f64).floor().max(1.0);
    let mut s = String::new();
    header(&mut s, cell * w as f64, cell * h as f64);
    for (p, &r) in regions.ids().iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="{}"/>"#,
            (p % w) as f64 * cell,
            (p / w) as f64 * cell,
            color(Some(r))
        );
    }
    s.push_str("</svg>\n");
    s
}

fn header(s: &mut String, w: f64, h: f64) {
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounding_box_maps_to_margins() {
        let svg = scatter(&[(0.0, 0.0), (2.0, 1.0), (1.0, 0.5)], &[Some(0), Some(1), None], 3.0);
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains(r#"cx="40.000" cy="760.000""#));
        assert!(svg.contains(r#"cx="760.000" cy="40.000""#));
        assert!(svg.contains(r#"cx="400.000" cy="400.000""#));
    }

    #[test]
    fn palette_cycles() {
        assert_eq!(color(Some(0)), color(Some(12)));
        assert_ne!(color(Some(0)), color(Some(1)));
    }

    #[test]
    fn region_svg_has_one_rect_per_pixel() {
        let r = RegionMap::new(2, 3, vec![0, 0, 1, 0, 1, 1]).unwrap();
        let svg = region_map(&r);
        assert_eq!(svg.matches("<rect x=").count(), 6);
    }
}
