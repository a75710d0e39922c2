//! Adversarial, L1 and SSIM objectives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Var};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// Lower bound applied to every log argument.
pub const LOG_CLAMP: f64 = 1e-7;

/// Weights of the L1 and SSIM terms of the generator objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_l1: f64,
    pub alpha_ssim: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_l1: 10.0,
            alpha_ssim: 5.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_l1 >= 0.0 && self.alpha_ssim >= 0.0) {
            return Err(Error::InvalidArgument(format!("loss weights must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Normalized 1-d Gaussian taps; the 2-d window is their outer product.
pub fn gaussian_window<T: Element>(size: usize, sigma: f64) -> Vec<T> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| T::lit(v / s)).collect()
}

/// Mean structural similarity of two `[N,C,H,W]` tensors with values in
/// [0,1], over every 11x11 Gaussian window (sigma 1.5) fully inside the image.
pub fn ssim<T: Element>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::ShapeMismatch {
            op: "ssim",
            lhs: g.shape(a).to_vec(),
            rhs: g.shape(b).to_vec(),
        });
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let k = gaussian_window::<T>(SSIM_WINDOW, SSIM_SIGMA);

    let mu_a = g.gauss_valid(a, &k)?;
    let mu_b = g.gauss_valid(b, &k)?;
    let aa = g.mul(a, a)?;
    let bb = g.mul(b, b)?;
    let ab = g.mul(a, b)?;
    let e_aa = g.gauss_valid(aa, &k)?;
    let e_bb = g.gauss_valid(bb, &k)?;
    let e_ab = g.gauss_valid(ab, &k)?;

    let mu_aa = g.mul(mu_a, mu_a)?;
    let mu_bb = g.mul(mu_b, mu_b)?;
    let mu_ab = g.mul(mu_a, mu_b)?;
    let var_a = g.sub(e_aa, mu_aa)?;
    let var_b = g.sub(e_bb, mu_bb)?;
    let cov = g.sub(e_ab, mu_ab)?;

    // Numerator and denominator are built so that a == b gives bitwise
    // equal factors: 2*(u*u) == u*u + u*u in IEEE arithmetic.
    let lum_num = g.mul_scalar(mu_ab, 2.0);
    let lum_num = g.add_scalar(lum_num, c1);
    let cs_num = g.mul_scalar(cov, 2.0);
    let cs_num = g.add_scalar(cs_num, c2);
    let lum_den = g.add(mu_aa, mu_bb)?;
    let lum_den = g.add_scalar(lum_den, c1);
    let cs_den = g.add(var_a, var_b)?;
    let cs_den = g.add_scalar(cs_den, c2);

    let num = g.mul(lum_num, cs_num)?;
    let den = g.mul(lum_den, cs_den)?;
    let map = g.div(num, den)?;
    Ok(g.mean(map))
}

/// Scalar pieces of the generator objective.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorLoss {
    pub total: Var,
    /// `mean(-log D(x, G(x)))`.
    pub adversarial: Var,
    /// `mean |y - m|`.
    pub l1: Var,
    /// `1 - SSIM(y, m)`.
    pub ssim_term: Var,
}

/// `mean(-log D_out) + lambda * mean|y - m| + alpha * (1 - SSIM(y, m))`.
pub fn generator_loss<T: Element>(
    g: &mut Graph<T>,
    d_out: Var,
    mask: Var,
    target: Var,
    weights: LossWeights,
) -> Result<GeneratorLoss> {
    let nl = g.neg_log_clamped(d_out, LOG_CLAMP, 1.0);
    let adversarial = g.mean(nl);
    let diff = g.sub(target, mask)?;
    let absd = g.abs(diff);
    let l1 = g.mean(absd);
    let s = ssim(g, target, mask)?;
    let neg = g.mul_scalar(s, -1.0);
    let ssim_term = g.add_scalar(neg, 1.0);
    let wl1 = g.mul_scalar(l1, weights.lambda_l1);
    let wssim = g.mul_scalar(ssim_term, weights.alpha_ssim);
    let partial = g.add(adversarial, wl1)?;
    let total = g.add(partial, wssim)?;
    Ok(GeneratorLoss {
        total,
        adversarial,
        l1,
        ssim_term,
    })
}

/// `mean(-log D_real) + mean(-log(1 - D_fake))`.
pub fn discriminator_loss<T: Element>(g: &mut Graph<T>, d_real: Var, d_fake: Var) -> Var {
    let real = g.neg_log_clamped(d_real, LOG_CLAMP, 1.0);
    let real = g.mean(real);
    let neg = g.mul_scalar(d_fake, -1.0);
    let one_minus = g.add_scalar(neg, 1.0);
    let fake = g.neg_log_clamped(one_minus, LOG_CLAMP, 1.0);
    let fake = g.mean(fake);
    g.add(real, fake).expect("both scalars")
}
