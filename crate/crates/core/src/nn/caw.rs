//! Channel attention + channel weighting (CAW) block.
//!
//! Applied to the deepest encoder features. Two branches see the same input
//! and their outputs are summed:
//!
//! - channel attention: with `X` the `C x (H*W)` view of a sample,
//!   `A = softmax_rows(X X^T)` and the branch returns `gamma * (A X) + X`.
//!   `gamma` is a learned scalar starting at zero, so the branch begins as
//!   the identity.
//! - channel weighting (squeeze-and-excitation): `s = sigmoid(W2 relu(W1
//!   GAP(x)))` rescales each channel of `x`.

use super::layers::{Linear, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Activation, Element, Graph, ParamId, ParamStore, RngStream, Tensor, Var};

pub const DEFAULT_REDUCTION: usize = 16;

/// `gamma * (softmax_rows(X X^T) X) + X` per sample.
pub fn channel_attention<T: Element>(g: &mut Graph<T>, x: Var, gamma: Var) -> Result<Var> {
    let [n, c, h, w] = g.value(x).dims4("channel_attention")?;
    let flat = g.reshape(x, &[n, c, h * w])?;
    let energy = g.batch_matmul(flat, flat, false, true)?;
    let affinity = g.softmax_last(energy);
    let attended = g.batch_matmul(affinity, flat, false, false)?;
    let scaled = g.scale_by(attended, gamma)?;
    let out = g.add(scaled, flat)?;
    g.reshape(out, &[n, c, h, w])
}

/// Squeeze-and-excitation channel weighting.
#[derive(Debug, Clone)]
pub struct ChannelWeighting {
    pub squeeze: Linear,
    pub excite: Linear,
    pub reduction: usize,
}

impl ChannelWeighting {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        c: usize,
        reduction: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if reduction == 0 || c % reduction != 0 {
            return Err(Error::InvalidArgument(format!(
                "channel reduction {reduction} must divide channel count {c}"
            )));
        }
        Ok(Self {
            squeeze: Linear::new(store, &format!("{name}.squeeze"), c, c / reduction, rng)?,
            excite: Linear::new(store, &format!("{name}.excite"), c / reduction, c, rng)?,
            reduction,
        })
    }

    /// Per-channel scale vector `s[N,C]`.
    pub fn scales<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let pooled = g.mean_spatial(x)?;
        let hidden = self.squeeze.forward(g, store, pooled, mode)?;
        let hidden = g.activation(hidden, Activation::Relu);
        let logits = self.excite.forward(g, store, hidden, mode)?;
        Ok(g.activation(logits, Activation::Sigmoid))
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let s = self.scales(g, store, x, mode)?;
        g.mul_channel(x, s)
    }
}

#[derive(Debug, Clone)]
pub struct CawBlock {
    pub gamma: ParamId,
    pub weighting: ChannelWeighting,
}

impl CawBlock {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        c: usize,
        reduction: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.attention_gamma"), Tensor::zeros(&[1]), true)?,
            weighting: ChannelWeighting::new(store, &format!("{name}.weighting"), c, reduction, rng)?,
        })
    }

    pub fn attention<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let gamma = g.param(store, self.gamma, mode.track);
        channel_attention(g, x, gamma)
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let att = self.attention(g, store, x, mode)?;
        let wgt = self.weighting.forward(g, store, x, mode)?;
        g.add(att, wgt)
    }
}
