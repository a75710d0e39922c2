//! Dense tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod element;
mod graph;
pub mod kernels;
mod params;
mod rng;
#[allow(clippy::module_inception)]
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use element::{ElemKind, Element};
pub use graph::{Activation, BatchStats, ConvSpec, Grads, Graph, Var};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use rng::RngStream;
pub use tensor::Tensor;

/// Batch-norm epsilon added under the square root.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch in running-statistic updates.
pub const BN_MOMENTUM: f64 = 0.1;
/// Standard deviation of the zero-mean Gaussian weight initializer.
pub const INIT_STD: f64 = 0.02;
