use super::preprocess::{resize_bilinear, resize_nearest};
use super::raster::{Mask, Raster, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flip {
    Horizontal,
    Vertical,
}

/// Clockwise quarter turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rotation {
    R90,
    R180,
    R270,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPlan {
    pub scales: Vec<f64>,
    pub gammas: Vec<f64>,
    pub flips: Vec<Flip>,
    pub rotations: Vec<Rotation>,
}

impl Default for AugmentPlan {
    /// Scales 0.5..=2.0 step 0.25, gammas 0.5..=2.5 step 0.5, both flips,
    /// three quarter-turn rotations: 17 variants per sample.
    fn default() -> Self {
        Self {
            scales: (0..7).map(|i| 0.5 + 0.25 * i as f64).collect(),
            gammas: (0..5).map(|i| 0.5 + 0.5 * i as f64).collect(),
            flips: vec![Flip::Horizontal, Flip::Vertical],
            rotations: vec![Rotation::R90, Rotation::R180, Rotation::R270],
        }
    }
}

impl AugmentPlan {
    pub fn variants(&self) -> usize {
        self.scales.len() + self.gammas.len() + self.flips.len() + self.rotations.len()
    }
}

/// Map from output pixel to source pixel for a geometric op.
fn remap_raster(img: &Raster, w: usize, h: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Raster {
    Raster::from_fn(w, h, |x, y| {
        let (sx, sy) = src(x, y);
        img.get(sx, sy)
    })
}

fn remap_mask(m: &Mask, w: usize, h: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Mask {
    Mask::from_fn(w, h, |x, y| {
        let (sx, sy) = src(x, y);
        m.get(sx, sy)
    })
}

pub fn flip_sample(s: &Sample, flip: Flip) -> Sample {
    let (w, h) = (s.image.width(), s.image.height());
    let src = move |x: usize, y: usize| match flip {
        Flip::Horizontal => (w - 1 - x, y),
        Flip::Vertical => (x, h - 1 - y),
    };
    Sample {
        id: s.id.clone(),
        image: remap_raster(&s.image, w, h, src),
        mask: remap_mask(&s.mask, w, h, src),
        label: s.label,
    }
}

pub fn rotate_sample(s: &Sample, rot: Rotation) -> Sample {
    let (w, h) = (s.image.width(), s.image.height());
    let (ow, oh) = match rot {
        Rotation::R180 => (w, h),
        _ => (h, w),
    };
    // Clockwise: output (x, y) reads source pixel (y, h-1-x) for 90 degrees.
    let src = move |x: usize, y: usize| match rot {
        Rotation::R90 => (y, h - 1 - x),
        Rotation::R180 => (w - 1 - x, h - 1 - y),
        Rotation::R270 => (w - 1 - y, x),
    };
    Sample {
        id: s.id.clone(),
        image: remap_raster(&s.image, ow, oh, src),
        mask: remap_mask(&s.mask, ow, oh, src),
        label: s.label,
    }
}

/// `v -> v^gamma` on the image; the mask is untouched.
pub fn gamma_sample(s: &Sample, gamma: f64) -> Sample {
    let mut image = s.image.clone();
    image
        .data_mut()
        .iter_mut()
        .for_each(|v| *v = (*v as f64).powf(gamma) as f32);
    Sample {
        id: s.id.clone(),
        image,
        mask: s.mask.clone(),
        label: s.label,
    }
}

/// Rescale, then center-crop (factor > 1) or zero-pad (factor < 1) back to
/// the original canvas.
pub fn scale_sample(s: &Sample, factor: f64) -> Sample {
    let (w, h) = (s.image.width(), s.image.height());
    let sw = ((w as f64 * factor).round() as usize).max(1);
    let sh = ((h as f64 * factor).round() as usize).max(1);
    if (sw, sh) == (w, h) {
        return s.clone();
    }
    let img = resize_bilinear(&s.image, sw, sh);
    let mask = resize_nearest(&s.mask, sw, sh);
    // Offset of the original canvas inside the scaled one (may be negative).
    let ox = (sw as isize - w as isize) / 2;
    let oy = (sh as isize - h as isize) / 2;
    let inside = |x: usize, y: usize| {
        let (sx, sy) = (x as isize + ox, y as isize + oy);
        (sx >= 0 && sy >= 0 && (sx as usize) < sw && (sy as usize) < sh).then_some((sx as usize, sy as usize))
    };
    Sample {
        id: s.id.clone(),
        image: Raster::from_fn(w, h, |x, y| inside(x, y).map_or(0.0, |(sx, sy)| img.get(sx, sy))),
        mask: Mask::from_fn(w, h, |x, y| inside(x, y).is_some_and(|(sx, sy)| mask.get(sx, sy))),
        label: s.label,
    }
}

/// One output per plan entry, in plan order (scales, gammas, flips, rotations).
/// Variant ids append a suffix such as `_s1.25`, `_g0.5`, `_fh`, `_r90`.
pub fn augment(s: &Sample, plan: &AugmentPlan) -> Vec<Sample> {
    let mut out = Vec::with_capacity(plan.variants());
    for &f in &plan.scales {
        let mut v = scale_sample(s, f);
        v.id = format!("{}_s{f:.2}", s.id);
        out.push(v);
    }
    for &g in &plan.gammas {
        let mut v = gamma_sample(s, g);
        v.id = format!("{}_g{g:.1}", s.id);
        out.push(v);
    }
    for &f in &plan.flips {
        let mut v = flip_sample(s, f);
        v.id = format!("{}_f{}", s.id, if f == Flip::Horizontal { "h" } else { "v" });
        out.push(v);
    }
    for &r in &plan.rotations {
        let mut v = rotate_sample(s, r);
        let deg = match r {
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        };
        v.id = format!("{}_r{deg}", s.id);
        out.push(v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Label;

    fn sample() -> Sample {
        let img = Raster::from_fn(8, 8, |x, y| (x * 8 + y) as f32 / 64.0);
        let mask = Mask::from_fn(8, 8, |x, y| x >= 2 && x < 5 && y < 3);
        Sample::new("s", img, mask, Label::Benign).unwrap()
    }

    #[test]
    fn seventeen_variants() {
        let plan = AugmentPlan::default();
        assert_eq!(plan.scales, vec![0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0]);
        assert_eq!(plan.gammas, vec![0.5, 1.0, 1.5, 2.0, 2.5]);
        assert_eq!(augment(&sample(), &plan).len(), 17);
    }

    #[test]
    fn unit_gamma_and_scale_are_identity() {
        let s = sample();
        assert_eq!(gamma_sample(&s, 1.0).image, s.image);
        assert_eq!(scale_sample(&s, 1.0), s);
    }

    #[test]
    fn gamma_leaves_mask() {
        let s = sample();
        assert_eq!(gamma_sample(&s, 2.5).mask, s.mask);
    }

    #[test]
    fn rotation_cycle() {
        let s = sample();
        let r = rotate_sample(&rotate_sample(&s, Rotation::R90), Rotation::R270);
        assert_eq!(r, s);
        let r180 = rotate_sample(&rotate_sample(&s, Rotation::R90), Rotation::R90);
        assert_eq!(r180, rotate_sample(&s, Rotation::R180));
        // Top-left pixel moves to the top-right corner under a clockwise turn.
        let r90 = rotate_sample(&s, Rotation::R90);
        assert_eq!(r90.image.get(7, 0), s.image.get(0, 0));
    }

    #[test]
    fn scaling_keeps_canvas_and_binary_mask() {
        let s = sample();
        for f in AugmentPlan::default().scales {
            let v = scale_sample(&s, f);
            assert_eq!((v.image.width(), v.image.height()), (8, 8));
            assert!(v.mask.data().iter().all(|&b| b <= 1));
        }
        // Shrinking pads with zeros at the border.
        assert_eq!(scale_sample(&s, 0.5).image.get(0, 0), 0.0);
    }
}
