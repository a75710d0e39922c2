use std::collections::BTreeSet;

use super::contour::Boundary;
use crate::data::Mask;
use crate::error::{Error, Result};

pub const BOX_SIZES: [usize; 6] = [2, 4, 8, 16, 32, 48];
pub const LACUNARITY_SCALES: [usize; 4] = [2, 4, 8, 16];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractalDimension {
    pub value: f64,
    /// Every box size saw a single occupied box; `value` is 0.
    pub degenerate: bool,
}

/// Occupied boxes of side `s` on a grid anchored at the origin.
pub fn box_count(points: &[(isize, isize)], s: usize) -> usize {
    let s = s as isize;
    points
        .iter()
        .map(|&(x, y)| (x.div_euclid(s), y.div_euclid(s)))
        .collect::<BTreeSet<_>>()
        .len()
}

/// Least-squares slope of `ln N(s)` against `ln(1/s)`.
pub fn fractal_dimension(b: &Boundary) -> FractalDimension {
    let pts: Vec<(f64, f64)> = BOX_SIZES
        .iter()
        .map(|&s| ((1.0 / s as f64).ln(), (box_count(&b.points, s) as f64).ln()))
        .collect();
    if pts.iter().all(|&(_, ln_n)| ln_n == 0.0) {
        return FractalDimension {
            value: 0.0,
            degenerate: true,
        };
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    FractalDimension {
        value: sxy / sxx,
        degenerate: false,
    }
}

/// Gliding-box lacunarity `E[M²]/E[M]²` at one scale, over every `r×r`
/// window fully inside the raster. `None` if the window does not fit or
/// every window is empty.
pub fn lacunarity_at(mask: &Mask, r: usize) -> Option<f64> {
    let (w, h) = (mask.width(), mask.height());
    if r == 0 || r > w || r > h {
        return None;
    }
    // Summed-area table with a zero border row/column.
    let mut sat = vec![0u64; (w + 1) * (h + 1)];
    for y in 0..h {
        for x in 0..w {
            sat[(y + 1) * (w + 1) + x + 1] =
                mask.get(x, y) as u64 + sat[y * (w + 1) + x + 1] + sat[(y + 1) * (w + 1) + x] - sat[y * (w + 1) + x];
        }
    }
    let (mut s1, mut s2, mut n) = (0u128, 0u128, 0u128);
    for y in 0..=h - r {
        for x in 0..=w - r {
            let m = (sat[(y + r) * (w + 1) + x + r] + sat[y * (w + 1) + x] - sat[y * (w + 1) + x + r] - sat[(y + r) * (w + 1) + x]) as u128;
            s1 += m;
            s2 += m * m;
            n += 1;
        }
    }
    // E[M²]/E[M]² = n·ΣM² / (ΣM)², kept in integers until the final ratio.
    (s1 > 0).then(|| (n * s2) as f64 / (s1 * s1) as f64)
}

/// Mean lacunarity over the scales that fit inside the raster.
pub fn lacunarity(mask: &Mask) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut vals = Vec::new();
    for r in LACUNARITY_SCALES {
        match lacunarity_at(mask, r) {
            Some(v) => vals.push(v),
            None => log::warn!("lacunarity: {r}x{r} window does not fit a {}x{} mask; scale skipped", mask.width(), mask.height()),
        }
    }
    if vals.is_empty() {
        return Err(Error::Geometry {
            op: "lacunarity",
            detail: format!("mask {}x{} is smaller than every gliding box", mask.width(), mask.height()),
        });
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}
