use super::element::Element;
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over the trainable entries of one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Option<Vec<T>>>,
    v: Vec<Option<Vec<T>>>,
}

impl<T: Element> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let moments = |store: &ParamStore<T>| {
            store
                .iter()
                .map(|(_, e)| e.trainable.then(|| vec![T::zero(); e.tensor.numel()]))
                .collect()
        };
        Self {
            config,
            t: 0,
            m: moments(store),
            v: moments(store),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, id: ParamId) -> Option<&[T]> {
        self.m[id.0].as_deref()
    }

    pub fn second_moment(&self, id: ParamId) -> Option<&[T]> {
        self.v[id.0].as_deref()
    }

    /// One update. Every gradient is validated before any parameter moves.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)]) -> Result<()> {
        for (id, g) in grads {
            let entry = store.entry(*id);
            if g.shape() != entry.tensor.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: entry.tensor.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(entry.name.clone()));
            }
            if self.m.get(id.0).map_or(true, Option::is_none) {
                return Err(Error::InvalidArgument(format!(
                    "parameter `{}` has no optimizer state",
                    entry.name
                )));
            }
        }
        self.t += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.t as i32));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        let one = T::one();
        for (id, g) in grads {
            let m = self.m[id.0].as_mut().expect("checked above");
            let v = self.v[id.0].as_mut().expect("checked above");
            let p = store.get_mut(*id).data_mut();
            for (((pi, &gi), mi), vi) in p.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi = *pi - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
