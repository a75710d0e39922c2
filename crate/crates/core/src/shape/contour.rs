use std::collections::VecDeque;

use crate::data::Mask;
use crate::error::{Error, Result};

/// Clockwise (on screen, y down) 8-neighborhood starting at west.
const RING: [(isize, isize); 8] = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)];

fn ring_index(d: (isize, isize)) -> usize {
    RING.iter().position(|&r| r == d).expect("offset is an 8-neighbor")
}

/// Outer contour as pixel coordinates `(x, y)`; closed implicitly (the last
/// point is 8-adjacent to the first and is not repeated).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Boundary {
    pub points: Vec<(isize, isize)>,
}

impl Boundary {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Consecutive pairs including the closing step.
    pub fn steps(&self) -> impl Iterator<Item = ((isize, isize), (isize, isize))> + '_ {
        let n = self.points.len();
        (0..if n > 1 { n } else { 0 }).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }
}

/// Largest 8-connected foreground component; ties go to the component met
/// first in raster order.
pub fn largest_component(mask: &Mask) -> Result<Mask> {
    let (w, h) = (mask.width(), mask.height());
    let mut label = vec![0u32; w * h];
    let mut best = (0usize, 0u32);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if mask.data()[start] == 0 || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for (dx, dy) in RING {
                let (nx, ny) = (x + dx, y + dy);
                if mask.get_signed(nx, ny) {
                    let j = ny as usize * w + nx as usize;
                    if label[j] == 0 {
                        label[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
        if size > best.0 {
            best = (size, next);
        }
    }
    if next == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(Mask::from_fn(w, h, |x, y| label[y * w + x] == best.1))
}

/// Moore-neighbor tracing of the largest component's outer contour,
/// clockwise from its top-leftmost pixel.
pub fn extract_boundary(mask: &Mask) -> Result<Boundary> {
    let comp = largest_component(mask)?;
    let first = comp.data().iter().position(|&v| v != 0).ok_or(Error::EmptyMask)?;
    let s = ((first % comp.width()) as isize, (first / comp.width()) as isize);
    let fg = |p: (isize, isize)| comp.get_signed(p.0, p.1);

    // Scan the ring of `p` clockwise, beginning just after the backtrack
    // direction; returns the next contour pixel and the new backtrack
    // direction (relative to that pixel).
    let advance = |p: (isize, isize), back: usize| -> Option<((isize, isize), usize)> {
        for k in 1..=8 {
            let d = RING[(back + k) % 8];
            let c = (p.0 + d.0, p.1 + d.1);
            if fg(c) {
                let prev = RING[(back + k - 1) % 8];
                let b = (p.0 + prev.0 - c.0, p.1 + prev.1 - c.1);
                return Some((c, ring_index(b)));
            }
        }
        None
    };

    let mut points = vec![s];
    // The west neighbor of the top-leftmost pixel is background.
    let Some(first_move) = advance(s, 0) else {
        return Ok(Boundary { points });
    };
    let (mut p, mut back) = first_move;
    let limit = 4 * comp.count() + 8;
    while points.len() <= limit {
        if p == s {
            // Jacob's criterion: stop once the first transition would repeat.
            if advance(s, back).map(|m| m.0) == Some(first_move.0) {
                break;
            }
        }
        points.push(p);
        let (c, b) = advance(p, back).expect("a traced pixel has a foreground neighbor");
        p = c;
        back = b;
    }
    Ok(Boundary { points })
}
