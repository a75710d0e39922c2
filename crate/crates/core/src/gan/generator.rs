//! Encoder-decoder generator with skip connections.
//!
//! Default schedule on a 96x96 input (channels in parentheses):
//!
//! ```text
//! En1 96->48 (64)   En2 48->24 (128)   En3 24->12 (256)   atrous 12->6 (256)
//! En4 6->3 (512)    pad to 4x4         En5 4->2 (512)     En6 2->1 (512)
//! En7 1->1 (512)    CAW
//! Dn1 1->2 (512)  + En5      Dn2 2->4 (512)  + padded En4
//! Dn3 4->6 (256)  + atrous   Dn4 6->12 (256) + En3
//! Dn5 12->24 (128)+ En2      Dn6 24->48 (64) + En1
//! Dn7 48->96 (1), tanh, mapped to [0,1]
//! ```
//!
//! All encoder and decoder layers use 4x4 kernels with stride 2. Dropout
//! stays active in Dn1-Dn3 at inference as well; the random stream passed
//! to [`Generator::forward`] plays the role of the noise input.

use serde::{Deserialize, Serialize};

use super::IMAGE_SIZE;
use crate::error::{Error, Result};
use crate::nn::{AtrousBlock, BatchNorm2d, CawBlock, Conv2d, ConvTranspose2d, Mode, DEFAULT_REDUCTION};
use crate::tensor::{Activation, ConvSpec, Element, Graph, ParamStore, RngStream, Var};

const KERNEL: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Output widths of En1..En7. The atrous block keeps En3's width and
    /// every decoder layer matches the width of its skip partner.
    pub widths: [usize; 7],
    /// Squeeze reduction of the channel weighting branch.
    pub reduction: usize,
    /// Dropout rate in Dn1..Dn3.
    pub dropout: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            widths: [64, 128, 256, 512, 512, 512, 512],
            reduction: DEFAULT_REDUCTION,
            dropout: 0.5,
        }
    }
}

impl GeneratorConfig {
    /// Same topology with a handful of channels per layer.
    pub fn tiny() -> Self {
        Self {
            widths: [2, 2, 4, 4, 4, 4, 4],
            reduction: 2,
            dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    conv: Conv2d,
    bn: Option<BatchNorm2d>,
    act: Activation,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    deconv: ConvTranspose2d,
    bn: Option<BatchNorm2d>,
    dropout: bool,
}

/// Intermediate tensors of one generator pass.
#[derive(Debug, Clone)]
pub struct GeneratorTrace {
    /// Outputs of En1..En7.
    pub encoder: Vec<Var>,
    pub atrous: Var,
    pub padded_en4: Var,
    pub caw_in: Var,
    pub caw_out: Var,
    /// Outputs of Dn1..Dn6 before skip concatenation.
    pub decoder: Vec<Var>,
    /// Raw tanh output in [-1, 1].
    pub tanh: Var,
    /// Mask in [0, 1].
    pub mask: Var,
}

/// Skip tensor that can be zeroed to probe the decoder's dependence on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Skip {
    En1,
    En2,
    En3,
    Atrous,
    PaddedEn4,
    En5,
}

#[derive(Debug, Clone)]
pub struct Generator<T> {
    pub config: GeneratorConfig,
    pub store: ParamStore<T>,
    encoder: Vec<EncoderLayer>,
    atrous: AtrousBlock,
    caw: CawBlock,
    decoder: Vec<DecoderLayer>,
}

impl<T: Element> Generator<T> {
    pub fn new(config: GeneratorConfig, rng: &mut RngStream) -> Result<Self> {
        let mut store = ParamStore::new();
        let w = config.widths;
        let s = &mut store;

        let enc_spec = ConvSpec::new(2, 1, 1);
        let mut encoder = Vec::with_capacity(7);
        let mut cin = 1;
        for (i, &cout) in w.iter().enumerate() {
            let name = format!("en{}", i + 1);
            // En7 sees a 1x1 map; pad 2 keeps it 1x1 under a 4x4 stride-2 kernel.
            let spec = if i == 6 { ConvSpec::new(2, 2, 1) } else { enc_spec };
            let conv = Conv2d::new(s, &name, cin, cout, KERNEL, spec, rng)?;
            let bn = if i == 0 || i == 6 {
                None
            } else {
                Some(BatchNorm2d::new(s, &format!("{name}.bn"), cout)?)
            };
            let act = if i == 6 { Activation::Relu } else { Activation::LEAKY_0_2 };
            encoder.push(EncoderLayer { conv, bn, act });
            cin = cout;
        }
        let atrous = AtrousBlock::new(s, "atrous", w[2], w[2], w[2], rng)?;
        let caw = CawBlock::new(s, "caw", w[6], config.reduction, rng)?;

        // (input channels, output channels, pad, dropout)
        let plan = [
            (w[6], w[4], 1, true),
            (2 * w[4], w[3], 1, true),
            (2 * w[3], w[2], 2, true),
            (2 * w[2], w[2], 1, false),
            (2 * w[2], w[1], 1, false),
            (2 * w[1], w[0], 1, false),
            (2 * w[0], 1, 1, false),
        ];
        let mut decoder = Vec::with_capacity(7);
        for (i, &(ci, co, pad, dropout)) in plan.iter().enumerate() {
            let name = format!("dn{}", i + 1);
            let deconv = ConvTranspose2d::new(s, &name, ci, co, KERNEL, 2, pad, rng)?;
            let bn = if i == 6 {
                None
            } else {
                Some(BatchNorm2d::new(s, &format!("{name}.bn"), co)?)
            };
            decoder.push(DecoderLayer { deconv, bn, dropout });
        }
        Ok(Self {
            config,
            store,
            encoder,
            atrous,
            caw,
            decoder,
        })
    }

    /// Mask prediction `[N,1,96,96] -> [N,1,96,96]` in [0,1].
    pub fn forward(&mut self, g: &mut Graph<T>, x: Var, rng: &mut RngStream, mode: Mode) -> Result<Var> {
        Ok(self.forward_traced(g, x, rng, mode, None)?.mask)
    }

    pub fn forward_traced(
        &mut self,
        g: &mut Graph<T>,
        x: Var,
        rng: &mut RngStream,
        mode: Mode,
        zero_skip: Option<Skip>,
    ) -> Result<GeneratorTrace> {
        let [_, c, h, w] = g.value(x).dims4("generator")?;
        if c != 1 || h != IMAGE_SIZE || w != IMAGE_SIZE {
            return Err(Error::NotPreprocessed {
                expected: IMAGE_SIZE,
                got_h: h,
                got_w: w,
            });
        }
        let store = &mut self.store;
        let mut enc_out = Vec::with_capacity(7);
        let mut cur = x;
        let mut atrous = None;
        let mut padded_en4 = None;
        for (i, layer) in self.encoder.iter().enumerate() {
            cur = layer.conv.forward(g, store, cur, mode)?;
            if let Some(bn) = &layer.bn {
                cur = bn.forward(g, store, cur, mode)?;
            }
            cur = g.activation(cur, layer.act);
            enc_out.push(cur);
            if i == 2 {
                cur = self.atrous.forward(g, store, cur, mode)?;
                atrous = Some(cur);
            } else if i == 3 {
                let [_, _, eh, ew] = g.value(cur).dims4("generator")?;
                cur = g.pad_bottom_right(cur, eh % 2, ew % 2)?;
                padded_en4 = Some(cur);
            }
        }
        let atrous = atrous.expect("encoder has En3");
        let padded_en4 = padded_en4.expect("encoder has En4");
        let caw_in = cur;
        let caw_out = self.caw.forward(g, store, cur, mode)?;

        let mut skips = [enc_out[4], padded_en4, atrous, enc_out[2], enc_out[1], enc_out[0]];
        if let Some(which) = zero_skip {
            let idx = match which {
                Skip::En5 => 0,
                Skip::PaddedEn4 => 1,
                Skip::Atrous => 2,
                Skip::En3 => 3,
                Skip::En2 => 4,
                Skip::En1 => 5,
            };
            let zeros = g.mul_scalar(skips[idx], 0.0);
            skips[idx] = zeros;
        }

        let mut dec_out = Vec::with_capacity(6);
        cur = caw_out;
        for (i, layer) in self.decoder.iter().enumerate() {
            cur = layer.deconv.forward(g, store, cur, mode)?;
            let Some(bn) = &layer.bn else { break };
            cur = bn.forward(g, store, cur, mode)?;
            if layer.dropout {
                cur = g.dropout(cur, self.config.dropout, rng, true)?;
            }
            cur = g.activation(cur, Activation::Relu);
            dec_out.push(cur);
            cur = g.concat_channels(cur, skips[i])?;
        }
        let tanh = g.activation(cur, Activation::Tanh);
        let half = g.mul_scalar(tanh, 0.5);
        let mask = g.add_scalar(half, 0.5);
        Ok(GeneratorTrace {
            encoder: enc_out,
            atrous,
            padded_en4,
            caw_in,
            caw_out,
            decoder: dec_out,
            tanh,
            mask,
        })
    }
}
