use serde::{Deserialize, Serialize};

use super::IMAGE_SIZE;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, Mode};
use crate::tensor::{Activation, ConvSpec, Element, Graph, ParamStore, RngStream, Var};

/// Output widths of Cn1..Cn4 (Cn5 emits one channel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub widths: [usize; 4],
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            widths: [64, 128, 256, 512],
        }
    }
}

impl DiscriminatorConfig {
    pub fn tiny() -> Self {
        Self { widths: [2, 2, 4, 4] }
    }
}

#[derive(Debug, Clone)]
struct Layer {
    conv: Conv2d,
    bn: Option<BatchNorm2d>,
    act: Activation,
}

/// Patch discriminator over the (image, mask) pair: 96x96 in, a 10x10 grid
/// of real/fake probabilities out.
#[derive(Debug, Clone)]
pub struct Discriminator<T> {
    pub config: DiscriminatorConfig,
    pub store: ParamStore<T>,
    layers: Vec<Layer>,
}

impl<T: Element> Discriminator<T> {
    pub fn new(config: DiscriminatorConfig, rng: &mut RngStream) -> Result<Self> {
        let mut store = ParamStore::new();
        let w = config.widths;
        let plan = [
            (2, w[0], 2, false, Activation::LEAKY_0_2),
            (w[0], w[1], 2, true, Activation::LEAKY_0_2),
            (w[1], w[2], 2, true, Activation::LEAKY_0_2),
            (w[2], w[3], 1, true, Activation::LEAKY_0_2),
            (w[3], 1, 1, false, Activation::Sigmoid),
        ];
        let mut layers = Vec::with_capacity(plan.len());
        for (i, &(cin, cout, stride, bn, act)) in plan.iter().enumerate() {
            let name = format!("cn{}", i + 1);
            let conv = Conv2d::new(&mut store, &name, cin, cout, 4, ConvSpec::new(stride, 1, 1), rng)?;
            let bn = if bn {
                Some(BatchNorm2d::new(&mut store, &format!("{name}.bn"), cout)?)
            } else {
                None
            };
            layers.push(Layer { conv, bn, act });
        }
        Ok(Self { config, store, layers })
    }

    /// Per-layer outputs; the last entry is the probability map.
    pub fn forward_traced(&mut self, g: &mut Graph<T>, image: Var, mask: Var, mode: Mode) -> Result<Vec<Var>> {
        for v in [image, mask] {
            let [_, c, h, w] = g.value(v).dims4("discriminator")?;
            if c != 1 || h != IMAGE_SIZE || w != IMAGE_SIZE {
                return Err(Error::NotPreprocessed {
                    expected: IMAGE_SIZE,
                    got_h: h,
                    got_w: w,
                });
            }
        }
        if g.shape(image)[0] != g.shape(mask)[0] {
            return Err(Error::ShapeMismatch {
                op: "discriminator",
                lhs: g.shape(image).to_vec(),
                rhs: g.shape(mask).to_vec(),
            });
        }
        let mut cur = g.concat_channels(image, mask)?;
        let mut trace = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            cur = layer.conv.forward(g, &self.store, cur, mode)?;
            if let Some(bn) = &layer.bn {
                cur = bn.forward(g, &mut self.store, cur, mode)?;
            }
            cur = g.activation(cur, layer.act);
            trace.push(cur);
        }
        Ok(trace)
    }

    /// `[N,1,96,96] x [N,1,96,96] -> [N,1,10,10]` in (0,1).
    pub fn forward(&mut self, g: &mut Graph<T>, image: Var, mask: Var, mode: Mode) -> Result<Var> {
        Ok(*self.forward_traced(g, image, mask, mode)?.last().expect("non-empty"))
    }
}
