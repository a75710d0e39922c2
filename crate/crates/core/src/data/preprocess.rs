use super::raster::{Mask, Raster, Sample};
use crate::gan::IMAGE_SIZE;

/// Bilinear resampling with pixel-center alignment and edge clamping.
pub fn resize_bilinear(img: &Raster, width: usize, height: usize) -> Raster {
    let (sw, sh) = (img.width(), img.height());
    let sx = sw as f64 / width as f64;
    let sy = sh as f64 / height as f64;
    let coord = |o: usize, scale: f64, len: usize| {
        let c = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = c.floor() as usize;
        (i0, (i0 + 1).min(len - 1), c - i0 as f64)
    };
    Raster::from_fn(width, height, |x, y| {
        let (x0, x1, fx) = coord(x, sx, sw);
        let (y0, y1, fy) = coord(y, sy, sh);
        let top = img.get(x0, y0) as f64 * (1.0 - fx) + img.get(x1, y0) as f64 * fx;
        let bot = img.get(x0, y1) as f64 * (1.0 - fx) + img.get(x1, y1) as f64 * fx;
        (top * (1.0 - fy) + bot * fy) as f32
    })
}

/// Nearest-neighbor resampling; keeps masks binary.
pub fn resize_nearest(mask: &Mask, width: usize, height: usize) -> Mask {
    let (sw, sh) = (mask.width(), mask.height());
    Mask::from_fn(width, height, |x, y| {
        let sx = (((x as f64 + 0.5) * sw as f64 / width as f64).floor() as usize).min(sw - 1);
        let sy = (((y as f64 + 0.5) * sh as f64 / height as f64).floor() as usize).min(sh - 1);
        mask.get(sx, sy)
    })
}

/// Resample to the network input size and clamp intensities to [0,1].
pub fn preprocess(s: &Sample) -> Sample {
    let mut image = if (s.image.width(), s.image.height()) == (IMAGE_SIZE, IMAGE_SIZE) {
        s.image.clone()
    } else {
        resize_bilinear(&s.image, IMAGE_SIZE, IMAGE_SIZE)
    };
    image.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Sample {
        id: s.id.clone(),
        image,
        mask: resize_nearest(&s.mask, IMAGE_SIZE, IMAGE_SIZE),
        label: s.label,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Label;

    #[test]
    fn identity_at_target_size() {
        let img = Raster::from_fn(96, 96, |x, y| ((x * 7 + y * 3) % 255) as f32 / 255.0);
        let mask = Mask::from_fn(96, 96, |x, y| x > y);
        let s = Sample::new("a", img.clone(), mask.clone(), Label::Benign).unwrap();
        let p = preprocess(&s);
        assert_eq!(p.image, img);
        assert_eq!(p.mask, mask);
        assert_eq!(preprocess(&p), p);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Raster::filled(192, 192, 0.4);
        let s = Sample::new("a", img, Mask::zeros(192, 192), Label::Benign).unwrap();
        let p = preprocess(&s);
        assert!(p.image.data().iter().all(|&v| (v - 0.4).abs() < 1e-6));
    }

    #[test]
    fn halving_averages_two_by_two_blocks() {
        // At an exact 2:1 ratio every output center falls midway between
        // four source centers.
        let img = Raster::from_fn(192, 192, |x, y| (0.3 * x as f32 + 0.7 * y as f32) / 192.0);
        let r = resize_bilinear(&img, 96, 96);
        for y in 0..96 {
            for x in 0..96 {
                let want = (img.get(2 * x, 2 * y) + img.get(2 * x + 1, 2 * y) + img.get(2 * x, 2 * y + 1) + img.get(2 * x + 1, 2 * y + 1))
                    / 4.0;
                assert!((r.get(x, y) - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn upscaled_mask_stays_binary() {
        let m = Mask::from_fn(10, 10, |x, y| (x + y) % 3 == 0);
        let r = resize_nearest(&m, 96, 96);
        assert!(r.data().iter().all(|&v| v <= 1));
        assert_eq!(r.get(0, 0), m.get(0, 0));
    }
}
