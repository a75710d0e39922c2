//! Synthetic ultrasound-like phantoms with known tumor boundaries.
//!
//! Benign cases are ellipses with a few broad lobes; malignant cases are
//! stars with narrow radial spikes. The tumor is dark on a brighter,
//! speckled background and the mask is exactly the generating polygon
//! sampled at pixel centers.

use std::f64::consts::PI;

use super::raster::{Label, Mask, Raster, Sample};
use crate::error::{Error, Result};
use crate::gan::IMAGE_SIZE;
use crate::tensor::RngStream;

const VERTICES: usize = 720;

#[derive(Debug, Clone)]
pub struct Phantom {
    pub sample: Sample,
    /// Closed boundary polygon in pixel coordinates (pixel centers at +0.5).
    pub boundary: Vec<(f64, f64)>,
}

fn lerp(rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.uniform()
}

/// Even-odd ray casting.
pub fn point_in_polygon(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn radial_profile(label: Label, rng: &mut RngStream) -> Box<dyn Fn(f64) -> f64> {
    match label {
        Label::Malignant => {
            let r0 = lerp(rng, 11.0, 16.0);
            let k = 8 + rng.below(7);
            let width = lerp(rng, 0.07, 0.10);
            let phase = lerp(rng, 0.0, 2.0 * PI);
            let spikes: Vec<(f64, f64)> = (0..k)
                .map(|j| {
                    let at = phase + 2.0 * PI * j as f64 / k as f64 + lerp(rng, -0.12, 0.12);
                    (at, lerp(rng, 0.45, 0.8))
                })
                .collect();
            Box::new(move |t| {
                let bumps: f64 = spikes
                    .iter()
                    .map(|&(at, amp)| {
                        let d = (t - at + PI).rem_euclid(2.0 * PI) - PI;
                        amp * (-d * d / (2.0 * width * width)).exp()
                    })
                    .sum();
                r0 * (0.85 + bumps)
            })
        }
        _ => {
            let r0 = lerp(rng, 14.0, 22.0);
            let aspect = lerp(rng, 0.65, 0.95);
            let tilt = lerp(rng, 0.0, PI);
            let lobes = 2 + rng.below(3) as i32;
            let lobe_amp = lerp(rng, 0.05, 0.12);
            let lobe_phase = lerp(rng, 0.0, 2.0 * PI);
            Box::new(move |t| {
                let (c, s) = ((t - tilt).cos(), (t - tilt).sin());
                let ellipse = aspect / (c * c * aspect * aspect + s * s).sqrt();
                r0 * ellipse * (1.0 + lobe_amp * (lobes as f64 * t + lobe_phase).cos())
            })
        }
    }
}

/// 3×3 box filter with edge replication.
fn box_blur(v: &[f64], n: usize) -> Vec<f64> {
    let at = |x: isize, y: isize| v[(y.clamp(0, n as isize - 1) as usize) * n + x.clamp(0, n as isize - 1) as usize];
    (0..n * n)
        .map(|i| {
            let (x, y) = ((i % n) as isize, (i / n) as isize);
            let mut s = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    s += at(x + dx, y + dy);
                }
            }
            s / 9.0
        })
        .collect()
}

/// Phantom `index` of the corpus generated from `seed`.
pub fn synth_phantom(index: usize, seed: u64) -> Phantom {
    let n = IMAGE_SIZE;
    let label = if index % 2 == 0 { Label::Benign } else { Label::Malignant };
    let mut rng = RngStream::new(seed).substream(index as u64);
    let cx = lerp(&mut rng, 0.38, 0.62) * n as f64;
    let cy = lerp(&mut rng, 0.38, 0.62) * n as f64;
    let radius = radial_profile(label, &mut rng);
    let boundary: Vec<(f64, f64)> = (0..VERTICES)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / VERTICES as f64;
            let r = radius(t);
            (cx + r * t.cos(), cy + r * t.sin())
        })
        .collect();
    let mask = Mask::from_fn(n, n, |x, y| point_in_polygon(&boundary, x as f64 + 0.5, y as f64 + 0.5));

    // Rayleigh-distributed speckle, lightly correlated, normalized to mean 1.
    let speckle: Vec<f64> = (0..n * n)
        .map(|_| {
            let (a, b) = (rng.normal(), rng.normal());
            (a * a + b * b).sqrt() / (PI / 2.0).sqrt()
        })
        .collect();
    let speckle = box_blur(&speckle, n);
    let bg = lerp(&mut rng, 0.5, 0.65);
    let fg = lerp(&mut rng, 0.08, 0.18);
    let gradient = lerp(&mut rng, -0.1, 0.1);
    let tissue: Vec<f64> = (0..n * n)
        .map(|i| {
            let (x, y) = (i % n, i / n);
            let depth = y as f64 / n as f64 - 0.5;
            if mask.get(x, y) {
                fg
            } else {
                bg * (1.0 + gradient * depth)
            }
        })
        .collect();
    let tissue = box_blur(&tissue, n);
    let image = Raster::from_fn(n, n, |x, y| {
        let i = y * n + x;
        (tissue[i] * speckle[i]).clamp(0.0, 1.0) as f32
    });
    let sample = Sample::new(format!("phantom_{index:04}"), image, mask, label).expect("extents agree by construction");
    Phantom { sample, boundary }
}

/// `n` phantoms alternating benign/malignant, starting with benign.
pub fn synth_phantoms(n: usize, seed: u64) -> Result<Vec<Sample>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 phantoms, got {n}")));
    }
    Ok((0..n).map(|i| synth_phantom(i, seed).sample).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_labels() {
        let s = synth_phantoms(10, 1).unwrap();
        assert_eq!(s.iter().filter(|p| p.label == Label::Benign).count(), 5);
        assert_eq!(s.iter().filter(|p| p.label == Label::Malignant).count(), 5);
        assert!(synth_phantoms(1, 1).is_err());
    }

    #[test]
    fn mask_matches_polygon_oracle() {
        for i in 0..6 {
            let p = synth_phantom(i, 7);
            let m = &p.sample.mask;
            assert!(m.count() > 200);
            for y in 0..m.height() {
                for x in 0..m.width() {
                    // Independent winding-number test at the pixel center.
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let mut wind = 0i32;
                    let b = &p.boundary;
                    for k in 0..b.len() {
                        let (a, c) = (b[k], b[(k + 1) % b.len()]);
                        let cross = (c.0 - a.0) * (py - a.1) - (px - a.0) * (c.1 - a.1);
                        if a.1 <= py && c.1 > py && cross > 0.0 {
                            wind += 1;
                        } else if a.1 > py && c.1 <= py && cross < 0.0 {
                            wind -= 1;
                        }
                    }
                    assert_eq!(m.get(x, y), wind != 0, "phantom {i} pixel ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn deterministic_and_dark_interior() {
        let a = synth_phantoms(4, 3).unwrap();
        assert_eq!(a, synth_phantoms(4, 3).unwrap());
        assert_ne!(a, synth_phantoms(4, 4).unwrap());
        for s in &a {
            let (mut fi, mut fn_, mut bi, mut bn) = (0.0, 0, 0.0, 0);
            for (v, &m) in s.image.data().iter().zip(s.mask.data()) {
                if m == 1 {
                    fi += *v as f64;
                    fn_ += 1;
                } else {
                    bi += *v as f64;
                    bn += 1;
                }
            }
            assert!(fi / (fn_ as f64) + 0.2 < bi / bn as f64);
        }
    }
}
