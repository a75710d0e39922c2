//! Binary morphology with rectangular structuring elements.
//!
//! Border convention: pixels outside the raster count as background for
//! dilation and as foreground for erosion, so neither operation invents or
//! removes mass at the image edge by itself.

use crate::data::Mask;

/// Rectangular structuring element of `w×h` ones whose origin sits at
/// offset `(ax, ay)` inside the rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Element {
    pub w: usize,
    pub h: usize,
    pub ax: usize,
    pub ay: usize,
}

impl Element {
    /// Odd square with a centered origin.
    pub const fn centered(size: usize) -> Self {
        Self {
            w: size,
            h: size,
            ax: size / 2,
            ay: size / 2,
        }
    }

    /// Square with the origin at its top-left cell.
    pub const fn top_left(size: usize) -> Self {
        Self {
            w: size,
            h: size,
            ax: 0,
            ay: 0,
        }
    }

    /// Offsets `(dx, dy)` of the element cells relative to the origin.
    fn offsets(self) -> impl Iterator<Item = (isize, isize)> {
        (0..self.h).flat_map(move |j| (0..self.w).map(move |i| (i as isize - self.ax as isize, j as isize - self.ay as isize)))
    }
}

/// `out(p) = OR_{b in B} in(p - b)`: the reflected element, so that
/// dilation and erosion are adjoint for asymmetric elements.
pub fn dilate(m: &Mask, se: Element) -> Mask {
    let offs: Vec<_> = se.offsets().collect();
    Mask::from_fn(m.width(), m.height(), |x, y| {
        offs.iter().any(|&(dx, dy)| m.get_signed(x as isize - dx, y as isize - dy))
    })
}

/// `out(p) = AND_{b in B} in(p + b)`; outside pixels count as foreground.
pub fn erode(m: &Mask, se: Element) -> Mask {
    let offs: Vec<_> = se.offsets().collect();
    let (w, h) = (m.width() as isize, m.height() as isize);
    Mask::from_fn(m.width(), m.height(), |x, y| {
        offs.iter().all(|&(dx, dy)| {
            let (sx, sy) = (x as isize + dx, y as isize + dy);
            sx < 0 || sy < 0 || sx >= w || sy >= h || m.get(sx as usize, sy as usize)
        })
    })
}

pub fn close(m: &Mask, se: Element) -> Mask {
    erode(&dilate(m, se), se)
}

pub const CLOSING_ELEMENT: Element = Element::centered(3);
pub const EROSION_ELEMENT: Element = Element::top_left(2);
pub const THRESHOLD: f32 = 0.5;

/// Threshold, 3×3 closing, then 2×2 erosion.
pub fn postprocess_mask(binary: &Mask) -> Mask {
    erode(&close(binary, CLOSING_ELEMENT), EROSION_ELEMENT)
}

/// Post-process a probability map of extent `width×height`.
pub fn postprocess(width: usize, height: usize, probs: &[f32]) -> crate::Result<Mask> {
    Ok(postprocess_mask(&Mask::threshold(width, height, probs, THRESHOLD)?))
}
