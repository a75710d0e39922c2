//! Network layers and the two architectural blocks of the generator.

mod atrous;
mod caw;
mod layers;

pub use atrous::{AtrousBlock, ATROUS_DILATIONS, ATROUS_KERNEL, ATROUS_STRIDE};
pub use caw::{channel_attention, CawBlock, ChannelWeighting, DEFAULT_REDUCTION};
pub use layers::{BatchNorm2d, Conv2d, ConvTranspose2d, Linear, Mode};
