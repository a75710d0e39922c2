use crate::data::Mask;

/// Central moments `μpq` up to order 3.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CentralMoments {
    pub mu00: f64,
    pub mu10: f64,
    pub mu01: f64,
    pub mu11: f64,
    pub mu20: f64,
    pub mu02: f64,
    pub mu21: f64,
    pub mu12: f64,
    pub mu30: f64,
    pub mu03: f64,
}

pub fn central_moments(mask: &Mask) -> CentralMoments {
    let n = mask.count() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for (x, y) in mask.iter_foreground() {
        sx += x as f64;
        sy += y as f64;
    }
    let (cx, cy) = (sx / n, sy / n);
    let mut m = CentralMoments {
        mu00: n,
        ..Default::default()
    };
    for (x, y) in mask.iter_foreground() {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        m.mu10 += dx;
        m.mu01 += dy;
        m.mu11 += dx * dy;
        m.mu20 += dx * dx;
        m.mu02 += dy * dy;
        m.mu21 += dx * dx * dy;
        m.mu12 += dx * dy * dy;
        m.mu30 += dx * dx * dx;
        m.mu03 += dy * dy * dy;
    }
    m
}

/// Scale-normalized central moments `ηpq = μpq / μ00^(1+(p+q)/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedMoments {
    pub eta11: f64,
    pub eta20: f64,
    pub eta02: f64,
    pub eta21: f64,
    pub eta12: f64,
    pub eta30: f64,
    pub eta03: f64,
}

impl NormalizedMoments {
    pub fn from_central(m: &CentralMoments) -> Self {
        let s2 = m.mu00 * m.mu00;
        let s3 = m.mu00.powf(2.5);
        Self {
            eta11: m.mu11 / s2,
            eta20: m.mu20 / s2,
            eta02: m.mu02 / s2,
            eta21: m.mu21 / s3,
            eta12: m.mu12 / s3,
            eta30: m.mu30 / s3,
            eta03: m.mu03 / s3,
        }
    }

    pub fn values(&self) -> [f64; 7] {
        [self.eta11, self.eta20, self.eta02, self.eta21, self.eta12, self.eta30, self.eta03]
    }

    /// Hu invariants φ1..φ6.
    pub fn hu(&self) -> [f64; 6] {
        let (n20, n02, n11) = (self.eta20, self.eta02, self.eta11);
        let (n30, n03, n21, n12) = (self.eta30, self.eta03, self.eta21, self.eta12);
        let (a, b) = (n30 + n12, n21 + n03);
        let (p, q) = (n30 - 3.0 * n12, 3.0 * n21 - n03);
        [
            n20 + n02,
            (n20 - n02).powi(2) + 4.0 * n11 * n11,
            p * p + q * q,
            a * a + b * b,
            p * a * (a * a - 3.0 * b * b) + q * b * (3.0 * a * a - b * b),
            (n20 - n02) * (a * a - b * b) + 4.0 * n11 * a * b,
        ]
    }
}

/// `sign(v)·log10(1 + |v|·10¹²)`: spreads the tiny higher-order invariants.
pub fn log_compress(v: f64) -> f64 {
    v.signum() * (1.0 + v.abs() * 1e12).log10()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentFeatures {
    pub hu: [f64; 6],
    pub hu_log: [f64; 6],
    pub eta: NormalizedMoments,
}

pub fn moment_features(mask: &Mask) -> MomentFeatures {
    let eta = NormalizedMoments::from_central(&central_moments(mask));
    let hu = eta.hu();
    MomentFeatures {
        hu,
        hu_log: hu.map(log_compress),
        eta,
    }
}
