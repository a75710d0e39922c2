use crate::error::Result;
use crate::tensor::{ConvSpec, Element, Graph, ParamId, ParamStore, RngStream, Tensor, Var, BN_EPS, BN_MOMENTUM, INIT_STD};

/// How a forward pass treats state and gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode {
    /// Batch statistics (and running-statistic updates) instead of running statistics.
    pub train: bool,
    /// Record gradients for this network's parameters.
    pub track: bool,
}

impl Mode {
    pub const TRAIN: Mode = Mode { train: true, track: true };
    /// Batch statistics without parameter gradients (e.g. the discriminator
    /// while the generator is being updated).
    pub const TRAIN_FROZEN: Mode = Mode { train: true, track: false };
    pub const INFER: Mode = Mode { train: false, track: false };
}

pub(crate) fn gaussian<T: Element>(shape: &[usize], std: f64, rng: &mut RngStream) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.normal() * std)).collect();
    Tensor::from_vec(shape, data).expect("extent from shape")
}

/// 2-d convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: ConvSpec,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        spec: ConvSpec,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), gaussian(&[cout, cin, k, k], INIT_STD, rng), true)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]), true)?;
        Ok(Self { weight, bias, spec })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let w = g.param(store, self.weight, mode.track);
        let b = g.param(store, self.bias, mode.track);
        g.conv2d(x, w, b, self.spec)
    }
}

/// Transposed 2-d convolution with bias.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), gaussian(&[cin, cout, k, k], INIT_STD, rng), true)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]), true)?;
        Ok(Self {
            weight,
            bias,
            stride,
            pad,
        })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let w = g.param(store, self.weight, mode.track);
        let b = g.param(store, self.bias, mode.track);
        g.conv_transpose2d(x, w, b, self.stride, self.pad)
    }
}

/// Batch normalization with running statistics kept as non-trainable buffers.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[c], T::one()), true)?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[c]), true)?,
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[c]), false)?,
            running_var: store.add(format!("{name}.running_var"), Tensor::full(&[c], T::one()), false)?,
        })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, store: &mut ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let gamma = g.param(store, self.gamma, mode.track);
        let beta = g.param(store, self.beta, mode.track);
        if mode.train {
            let (y, stats) = g.batch_norm_train(x, gamma, beta, BN_EPS)?;
            let mom = T::lit(BN_MOMENTUM);
            let keep = T::one() - mom;
            for (id, batch) in [(self.running_mean, &stats.mean), (self.running_var, &stats.var_unbiased)] {
                let run = store.get_mut(id).data_mut();
                run.iter_mut().zip(batch).for_each(|(r, &b)| *r = keep * *r + mom * b);
            }
            Ok(y)
        } else {
            let rm = store.get(self.running_mean).clone();
            let rv = store.get(self.running_var).clone();
            g.batch_norm_infer(x, gamma, beta, rm.data(), rv.data(), BN_EPS)
        }
    }
}

/// Fully connected layer `[N,I] -> [N,O]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        inp: usize,
        out: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.add(format!("{name}.weight"), gaussian(&[out, inp], INIT_STD, rng), true)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[out]), true)?,
        })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let w = g.param(store, self.weight, mode.track);
        let b = g.param(store, self.bias, mode.track);
        g.linear(x, w, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_stats_follow_momentum() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 1).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(&[2, 1, 1, 1], vec![0.0, 2.0]).unwrap());
        bn.forward(&mut g, &mut store, x, Mode::TRAIN).unwrap();
        // mean 1, unbiased var 2
        assert!((store.get(bn.running_mean).item() - 0.1).abs() < 1e-12);
        assert!((store.get(bn.running_var).item() - (0.9 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn init_statistics() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = RngStream::new(0);
        let conv = Conv2d::new(&mut store, "c", 64, 64, 4, ConvSpec::new(2, 1, 1), &mut rng).unwrap();
        let w = store.get(conv.weight).data();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-3);
        assert!((std - INIT_STD).abs() < 1e-3);
        assert!(store.get(conv.bias).data().iter().all(|&b| b == 0.0));
    }
}
