use std::f64::consts::{PI, SQRT_2};

use super::contour::Boundary;
use super::moments::central_moments;
use crate::data::Mask;

/// Andrew's monotone chain; counter-clockwise hull without collinear points.
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * p.len());
    for pass in [p.clone(), p.iter().rev().copied().collect()] {
        let base = hull.len();
        for q in pass {
            while hull.len() >= base + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    hull
}

pub fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        .abs()
        / 2.0
}

pub fn polygon_perimeter(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    if n < 2 {
        return 0.0;
    }
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            (a.0 - b.0).hypot(a.1 - b.1)
        })
        .sum()
}

/// Contour length: axis steps count 1, diagonal steps √2.
pub fn contour_perimeter(b: &Boundary) -> f64 {
    b.steps()
        .map(|(a, c)| if a.0 != c.0 && a.1 != c.1 { SQRT_2 } else { 1.0 })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub area: f64,
    pub perimeter: f64,
    /// Mean pixel-center coordinate divided by the raster extent.
    pub centroid_x: f64,
    pub centroid_y: f64,
    pub major_axis: f64,
    pub minor_axis: f64,
    pub circularity: f64,
    pub convexity: f64,
    pub solidity: f64,
    pub smoothness: f64,
    /// Single-pixel region: axes and circularity are reported as 0.
    pub degenerate: bool,
}

/// Geometric descriptors of `mask` (the region the boundary was traced from).
///
/// Solidity divides by the hull of the boundary pixels' corners, so a
/// rasterized convex region scores 1; convexity compares the hull of the
/// boundary pixel centers with the contour through those same centers.
pub fn geometry_features(mask: &Mask, b: &Boundary) -> Geometry {
    let area = mask.count() as f64;
    let (w, h) = (mask.width() as f64, mask.height() as f64);
    let (mut sx, mut sy) = (0.0, 0.0);
    for (x, y) in mask.iter_foreground() {
        sx += x as f64;
        sy += y as f64;
    }
    let (cx, cy) = (sx / area, sy / area);
    let perimeter = contour_perimeter(b);
    let degenerate = mask.count() <= 1;

    let mu = central_moments(mask);
    let (a, bb, c) = (mu.mu20 / mu.mu00, mu.mu11 / mu.mu00, mu.mu02 / mu.mu00);
    let root = ((a - c) * (a - c) + 4.0 * bb * bb).sqrt();
    let l1 = ((a + c + root) / 2.0).max(0.0);
    let l2 = ((a + c - root) / 2.0).max(0.0);

    let centers: Vec<(f64, f64)> = b.points.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
    let corners: Vec<(f64, f64)> = b
        .points
        .iter()
        .flat_map(|&(x, y)| {
            let (x, y) = (x as f64 - 0.5, y as f64 - 0.5);
            [(x, y), (x + 1.0, y), (x, y + 1.0), (x + 1.0, y + 1.0)]
        })
        .collect();
    let hull_area = polygon_area(&convex_hull(&corners));
    let hull_perimeter = polygon_perimeter(&convex_hull(&centers));

    let radii: Vec<f64> = centers.iter().map(|&(x, y)| (x - cx).hypot(y - cy)).collect();
    let n = radii.len() as f64;
    let r_mean = radii.iter().sum::<f64>() / n;
    let r_var = radii.iter().map(|r| (r - r_mean) * (r - r_mean)).sum::<f64>() / n;
    let smoothness = if r_mean > 0.0 { 1.0 - 1.0 / (1.0 + r_var / (r_mean * r_mean)) } else { 0.0 };

    Geometry {
        area,
        perimeter,
        centroid_x: (cx + 0.5) / w,
        centroid_y: (cy + 0.5) / h,
        major_axis: if degenerate { 0.0 } else { 4.0 * l1.sqrt() },
        minor_axis: if degenerate { 0.0 } else { 4.0 * l2.sqrt() },
        circularity: if degenerate || perimeter == 0.0 { 0.0 } else { 4.0 * PI * area / (perimeter * perimeter) },
        convexity: if perimeter > 0.0 { hull_perimeter / perimeter } else { 1.0 },
        solidity: if hull_area > 0.0 { area / hull_area } else { 1.0 },
        smoothness,
        degenerate,
    }
}
