//! Adversarial tumor segmentation for breast-ultrasound images and
//! boundary-shape classification of the predicted masks.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense tensors, a reverse-mode tape and Adam.
//! - [`nn`]: the atrous convolution block and the channel attention +
//!   channel weighting block.
//! - [`gan`]: generator, patch discriminator, SSIM and the adversarial
//!   training loop.
//! - [`data`]: dataset I/O, preprocessing, augmentation, splitting and
//!   synthetic phantoms.
//! - [`eval`]: post-processing morphology and segmentation metrics.
//! - [`shape`]: contour tracing, shape descriptors, random forest and
//!   exhaustive feature selection.
//! - [`checkpoint`] and [`config`]: persistence and run configuration.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gan;
pub mod nn;
pub mod shape;
pub mod tensor;

pub use error::{Error, Result};
