//! Multi-rate atrous (dilated) convolution block.
//!
//! Three parallel 3x3 stride-2 convolutions with dilation 1, 6 and 9 look at
//! the same input with growing receptive fields. Each branch pads by its own
//! dilation, so all branches land on the same `floor((H-1)/2)+1` grid; they
//! are concatenated and fused back to `Cout` channels by a 1x1 convolution,
//! followed by batch norm and LeakyReLU(0.2).

use super::layers::{BatchNorm2d, Conv2d, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Activation, ConvSpec, Element, Graph, ParamStore, RngStream, Var};

pub const ATROUS_DILATIONS: [usize; 3] = [1, 6, 9];
pub const ATROUS_KERNEL: usize = 3;
pub const ATROUS_STRIDE: usize = 2;

#[derive(Debug, Clone)]
pub struct AtrousBlock {
    pub branches: Vec<Conv2d>,
    pub fuse: Conv2d,
    pub bn: BatchNorm2d,
}

impl AtrousBlock {
    /// Branch width `cb`, output width `cout`.
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cb: usize,
        cout: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let branches = ATROUS_DILATIONS
            .iter()
            .map(|&d| {
                Conv2d::new(
                    store,
                    &format!("{name}.branch_d{d}"),
                    cin,
                    cb,
                    ATROUS_KERNEL,
                    ConvSpec::new(ATROUS_STRIDE, d, d),
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let fuse = Conv2d::new(
            store,
            &format!("{name}.fuse"),
            cb * ATROUS_DILATIONS.len(),
            cout,
            1,
            ConvSpec::new(1, 0, 1),
            rng,
        )?;
        let bn = BatchNorm2d::new(store, &format!("{name}.bn"), cout)?;
        Ok(Self { branches, fuse, bn })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, store: &mut ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let outs = self
            .branches
            .iter()
            .map(|b| b.forward(g, store, x, mode))
            .collect::<Result<Vec<_>>>()?;
        let extent = |v: Var, g: &Graph<T>| (g.shape(v)[2], g.shape(v)[3]);
        let first = extent(outs[0], g);
        if let Some(bad) = outs.iter().find(|&&o| extent(o, g) != first) {
            return Err(Error::Invariant(format!(
                "atrous branch extents differ: {:?} vs {:?}",
                first,
                extent(*bad, g)
            )));
        }
        let mut cat = outs[0];
        for &o in &outs[1..] {
            cat = g.concat_channels(cat, o)?;
        }
        let fused = self.fuse.forward(g, store, cat, mode)?;
        let normed = self.bn.forward(g, store, fused, mode)?;
        Ok(g.activation(normed, Activation::LEAKY_0_2))
    }
}
