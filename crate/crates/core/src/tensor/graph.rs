//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape index order is a
//! topological order and backward is a single reverse sweep. Nodes whose
//! inputs do not require gradients keep only their value.

use super::element::Element;
use super::kernels::{self, conv_out_extent, MatRef, Window};
use super::params::{ParamId, ParamStore};
use super::rng::RngStream;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Elementwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    /// `v` for `v >= 0`, `slope * v` otherwise.
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub const LEAKY_0_2: Activation = Activation::LeakyRelu(0.2);
}

/// Convolution hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub const fn new(stride: usize, pad: usize, dilation: usize) -> Self {
        Self { stride, pad, dilation }
    }
}

enum Op<T> {
    Leaf,
    /// Value only; no input requires a gradient.
    Detached,
    Conv2d { win: Window, cols: Vec<T> },
    ConvT2d { win: Window, x_cn: Vec<T> },
    BatchNorm { xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    Act(Activation),
    Dropout { mask: Vec<T> },
    Add,
    Sub,
    Mul,
    Div,
    AddScalar,
    MulScalar(T),
    Abs,
    NegLogClamp { lo: T, hi: T },
    Sum,
    Mean,
    Concat,
    PadRB,
    Reshape,
    BatchMatMul { ta: bool, tb: bool },
    Softmax,
    ScaleBy,
    MeanSpatial,
    Linear,
    MulChannel,
    GaussValid { kernel: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    parents: Vec<Var>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Batch statistics produced by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, used for running-statistic updates.
    pub var_unbiased: Vec<T>,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            parents: Vec::new(),
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Bind a stored parameter as a leaf. Gradients are tracked when
    /// `track` is set and the entry is trainable.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId, track: bool) -> Var {
        let entry = store.entry(id);
        self.nodes.push(Node {
            value: entry.tensor.clone(),
            op: Op::Leaf,
            parents: Vec::new(),
            requires_grad: track && entry.trainable,
            param: Some(id),
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: Vec<Var>) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let op = if requires_grad { op } else { Op::Detached };
        self.nodes.push(Node {
            value,
            op,
            parents,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---- convolution -------------------------------------------------

    /// Cross-correlation of `x[N,C,H,W]` with `w[K,C,kh,kw]` plus bias `b[K]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: ConvSpec) -> Result<Var> {
        let [n, c, h, wd] = self.value(x).dims4("conv2d")?;
        let [k, wc, kh, kw] = self.value(w).dims4("conv2d")?;
        if wc != c {
            return Err(mismatch("conv2d (input channels vs weight)", self.shape(x), self.shape(w)));
        }
        if self.shape(b) != [k] {
            return Err(mismatch("conv2d (bias)", self.shape(b), &[k]));
        }
        let geom = |len: usize, kk: usize| {
            conv_out_extent(len, kk, spec.stride, spec.pad, spec.dilation).ok_or_else(|| Error::Geometry {
                op: "conv2d",
                detail: format!(
                    "input extent {len} with pad {} is smaller than dilated kernel {} (k={kk}, d={})",
                    spec.pad,
                    spec.dilation * (kk - 1) + 1,
                    spec.dilation
                ),
            })
        };
        let (ho, wo) = (geom(h, kh)?, geom(wd, kw)?);
        let win = Window {
            kh,
            kw,
            stride: spec.stride,
            pad: spec.pad,
            dilation: spec.dilation,
        };
        let cols = kernels::im2col(self.value(x).data(), n, c, h, wd, win, ho, wo);
        let ncols = n * ho * wo;
        let mut out_cn = vec![T::zero(); k * ncols];
        kernels::gemm(
            T::one(),
            MatRef::new(self.value(w).data(), k, c * kh * kw),
            MatRef::new(&cols, c * kh * kw, ncols),
            T::zero(),
            &mut out_cn,
        );
        let bias = self.value(b).data();
        for (row, &bv) in out_cn.chunks_mut(ncols).zip(bias) {
            row.iter_mut().for_each(|v| *v = *v + bv);
        }
        let out = kernels::cn_to_nchw(&out_cn, n, k, ho * wo);
        let value = Tensor::new_unchecked(vec![n, k, ho, wo], out);
        let keep = if self.any_grad(&[w]) { cols } else { Vec::new() };
        Ok(self.push(value, Op::Conv2d { win, cols: keep }, vec![x, w, b]))
    }

    /// Transposed convolution (adjoint of [`Graph::conv2d`]); `w[C_in,C_out,kh,kw]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let [n, cin, hi, wi] = self.value(x).dims4("conv_transpose2d")?;
        let [wcin, cout, kh, kw] = self.value(w).dims4("conv_transpose2d")?;
        if wcin != cin {
            return Err(mismatch(
                "conv_transpose2d (input channels vs weight)",
                self.shape(x),
                self.shape(w),
            ));
        }
        if self.shape(b) != [cout] {
            return Err(mismatch("conv_transpose2d (bias)", self.shape(b), &[cout]));
        }
        let extent = |len: usize, k: usize| -> Result<usize> {
            let full = (len as isize - 1) * stride as isize + k as isize - 2 * pad as isize;
            if full <= 0 || stride == 0 {
                return Err(Error::Geometry {
                    op: "conv_transpose2d",
                    detail: format!("non-positive output extent {full} (in={len}, k={k}, s={stride}, p={pad})"),
                });
            }
            Ok(full as usize)
        };
        let (ho, wo) = (extent(hi, kh)?, extent(wi, kw)?);
        let win = Window {
            kh,
            kw,
            stride,
            pad,
            dilation: 1,
        };
        let x_cn = kernels::nchw_to_cn(self.value(x).data(), n, cin, hi * wi);
        let ncols = n * hi * wi;
        let mut cols = vec![T::zero(); cout * kh * kw * ncols];
        kernels::gemm(
            T::one(),
            MatRef::new(self.value(w).data(), cin, cout * kh * kw).t(),
            MatRef::new(&x_cn, cin, ncols),
            T::zero(),
            &mut cols,
        );
        let mut out = kernels::col2im(&cols, n, cout, ho, wo, win, hi, wi);
        let bias = self.value(b).data();
        for (i, plane) in out.chunks_mut(ho * wo).enumerate() {
            let bv = bias[i % cout];
            plane.iter_mut().for_each(|v| *v = *v + bv);
        }
        let value = Tensor::new_unchecked(vec![n, cout, ho, wo], out);
        let keep = if self.any_grad(&[w]) { x_cn } else { Vec::new() };
        Ok(self.push(value, Op::ConvT2d { win, x_cn: keep }, vec![x, w, b]))
    }

    // ---- normalization ------------------------------------------------

    fn bn_check(&self, x: Var, gamma: Var, beta: Var) -> Result<[usize; 4]> {
        let dims = self.value(x).dims4("batch_norm")?;
        let c = dims[1];
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(mismatch("batch_norm (channel parameters)", self.shape(x), self.shape(p)));
            }
        }
        Ok(dims)
    }

    /// Batch norm with batch statistics over (N,H,W) per channel.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats<T>)> {
        let [n, c, h, w] = self.bn_check(x, gamma, beta)?;
        let hw = h * w;
        let m = n * hw;
        if m == 0 {
            return Err(Error::Geometry {
                op: "batch_norm",
                detail: "empty batch".into(),
            });
        }
        let xs = self.value(x).data();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        let mut var_unbiased = vec![T::zero(); c];
        let mut inv_std = vec![T::zero(); c];
        let mf = T::from_usize(m).unwrap();
        for ci in 0..c {
            let mut s = T::zero();
            for ni in 0..n {
                s = s + xs[(ni * c + ci) * hw..(ni * c + ci + 1) * hw].iter().copied().sum::<T>();
            }
            let mu = s / mf;
            let mut sq = T::zero();
            for ni in 0..n {
                for &v in &xs[(ni * c + ci) * hw..(ni * c + ci + 1) * hw] {
                    let d = v - mu;
                    sq = sq + d * d;
                }
            }
            mean[ci] = mu;
            var[ci] = sq / mf;
            var_unbiased[ci] = if m > 1 { sq / T::from_usize(m - 1).unwrap() } else { T::zero() };
            inv_std[ci] = T::one() / (var[ci] + T::lit(eps)).sqrt();
        }
        let mut xhat = vec![T::zero(); xs.len()];
        let mut out = vec![T::zero(); xs.len()];
        for (i, plane) in xs.chunks(hw).enumerate() {
            let ci = i % c;
            for (j, &v) in plane.iter().enumerate() {
                let xh = (v - mean[ci]) * inv_std[ci];
                xhat[i * hw + j] = xh;
                out[i * hw + j] = g[ci] * xh + bt[ci];
            }
        }
        let value = Tensor::new_unchecked(vec![n, c, h, w], out);
        let var_out = self.push(
            value,
            Op::BatchNorm {
                xhat,
                inv_std,
                train: true,
            },
            vec![x, gamma, beta],
        );
        Ok((var_out, BatchStats { mean, var_unbiased }))
    }

    /// Batch norm with fixed (running) statistics.
    pub fn batch_norm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: f64,
    ) -> Result<Var> {
        let [n, c, h, w] = self.bn_check(x, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(mismatch("batch_norm (running statistics)", &[c], &[running_mean.len()]));
        }
        let hw = h * w;
        let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + T::lit(eps)).sqrt()).collect();
        let xs = self.value(x).data();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xs.len()];
        let mut out = vec![T::zero(); xs.len()];
        for (i, plane) in xs.chunks(hw).enumerate() {
            let ci = i % c;
            for (j, &v) in plane.iter().enumerate() {
                let xh = (v - running_mean[ci]) * inv_std[ci];
                xhat[i * hw + j] = xh;
                out[i * hw + j] = g[ci] * xh + bt[ci];
            }
        }
        let value = Tensor::new_unchecked(vec![n, c, h, w], out);
        Ok(self.push(
            value,
            Op::BatchNorm {
                xhat,
                inv_std,
                train: false,
            },
            vec![x, gamma, beta],
        ))
    }

    // ---- elementwise ---------------------------------------------------

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let value = match kind {
            Activation::Relu => self.value(x).map(|v| v.max(T::zero())),
            Activation::LeakyRelu(slope) => {
                let s = T::lit(slope);
                self.value(x).map(|v| if v >= T::zero() { v } else { s * v })
            }
            Activation::Tanh => self.value(x).map(|v| v.tanh()),
            Activation::Sigmoid => self.value(x).map(sigmoid),
        };
        self.push(value, Op::Act(kind), vec![x])
    }

    /// Inverted dropout. Mask bits are drawn from `rng` whenever `active`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut RngStream, active: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout rate {p} outside [0, 1)")));
        }
        if !active || p == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| if rng.uniform() < p { T::zero() } else { keep })
            .collect();
        let xs = self.value(x);
        let value = Tensor::new_unchecked(
            xs.shape().to_vec(),
            xs.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect(),
        );
        Ok(self.push(value, Op::Dropout { mask }, vec![x]))
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<T>, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(name, self.shape(a), self.shape(b)));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new_unchecked(va.shape().to_vec(), data);
        Ok(self.push(value, op, vec![a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add, "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub, "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul, "mul", |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div, "div", |x, y| x / y)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = T::lit(c);
        let value = self.value(x).map(|v| v + c);
        self.push(value, Op::AddScalar, vec![x])
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = T::lit(c);
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::MulScalar(c), vec![x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.abs());
        self.push(value, Op::Abs, vec![x])
    }

    /// `-ln(clamp(x, lo, hi))`; zero derivative where the clamp is active.
    pub fn neg_log_clamped(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::lit(lo), T::lit(hi));
        let value = self.value(x).map(|v| -(v.max(lo).min(hi)).ln());
        self.push(value, Op::NegLogClamp { lo, hi }, vec![x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum, vec![x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().copied().sum::<T>() / T::from_usize(v.numel()).unwrap();
        self.push(Tensor::scalar(s), Op::Mean, vec![x])
    }

    // ---- structural ------------------------------------------------------

    /// Concatenate two NCHW tensors along channels.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, ca, h, w] = self.value(a).dims4("concat")?;
        let [nb, cb, hb, wb] = self.value(b).dims4("concat")?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(mismatch("concat_channels", self.shape(a), self.shape(b)));
        }
        let hw = h * w;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (ca + cb) * hw);
        for ni in 0..n {
            out.extend_from_slice(&da[ni * ca * hw..(ni + 1) * ca * hw]);
            out.extend_from_slice(&db[ni * cb * hw..(ni + 1) * cb * hw]);
        }
        let value = Tensor::new_unchecked(vec![n, ca + cb, h, w], out);
        Ok(self.push(value, Op::Concat, vec![a, b]))
    }

    /// Zero-pad an NCHW tensor at the bottom and right.
    pub fn pad_bottom_right(&mut self, x: Var, ph: usize, pw: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("pad")?;
        let (h2, w2) = (h + ph, w + pw);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * c * h2 * w2];
        for plane in 0..n * c {
            for y in 0..h {
                let s = &src[(plane * h + y) * w..(plane * h + y + 1) * w];
                out[(plane * h2 + y) * w2..(plane * h2 + y) * w2 + w].copy_from_slice(s);
            }
        }
        let value = Tensor::new_unchecked(vec![n, c, h2, w2], out);
        Ok(self.push(value, Op::PadRB, vec![x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape, vec![x]))
    }

    /// Batched matrix product of `[B,M,K]` by `[B,K,N]`, with optional
    /// transposition of either operand's last two axes.
    pub fn batch_matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(mismatch("batch_matmul", &sa, &sb));
        }
        let (m, ka) = if ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (kb, nn) = if tb { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if ka != kb {
            return Err(mismatch("batch_matmul (inner)", &sa, &sb));
        }
        let bsz = sa[0];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let (stride_a, stride_b) = (sa[1] * sa[2], sb[1] * sb[2]);
        let mut out = vec![T::zero(); bsz * m * nn];
        for bi in 0..bsz {
            let av = MatRef::new(&da[bi * stride_a..(bi + 1) * stride_a], sa[1], sa[2]);
            let bv = MatRef::new(&db[bi * stride_b..(bi + 1) * stride_b], sb[1], sb[2]);
            kernels::gemm(
                T::one(),
                if ta { av.t() } else { av },
                if tb { bv.t() } else { bv },
                T::zero(),
                &mut out[bi * m * nn..(bi + 1) * m * nn],
            );
        }
        let value = Tensor::new_unchecked(vec![bsz, m, nn], out);
        Ok(self.push(value, Op::BatchMatMul { ta, tb }, vec![a, b]))
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax_last(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let last = *v.shape().last().expect("non-scalar");
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(last) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for e in row.iter_mut() {
                *e = (*e - mx).exp();
                s = s + *e;
            }
            row.iter_mut().for_each(|e| *e = *e / s);
        }
        let value = Tensor::new_unchecked(v.shape().to_vec(), out);
        self.push(value, Op::Softmax, vec![x])
    }

    /// Multiply every element of `x` by the single value held in `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(mismatch("scale_by", self.shape(s), &[1]));
        }
        let sv = self.value(s).item();
        let value = self.value(x).map(|v| v * sv);
        Ok(self.push(value, Op::ScaleBy, vec![x, s]))
    }

    /// Global average pooling `[N,C,H,W] -> [N,C]`.
    pub fn mean_spatial(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("mean_spatial")?;
        let hw = T::from_usize(h * w).unwrap();
        let data = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().copied().sum::<T>() / hw)
            .collect();
        let value = Tensor::new_unchecked(vec![n, c], data);
        Ok(self.push(value, Op::MeanSpatial, vec![x]))
    }

    /// `x[N,I] * w[O,I]^T + b[O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] || self.shape(b) != [sw[0]] {
            return Err(mismatch("linear", &sx, &sw));
        }
        let (n, i, o) = (sx[0], sx[1], sw[0]);
        let mut out = vec![T::zero(); n * o];
        kernels::gemm(
            T::one(),
            MatRef::new(self.value(x).data(), n, i),
            MatRef::new(self.value(w).data(), o, i).t(),
            T::zero(),
            &mut out,
        );
        let bias = self.value(b).data();
        for row in out.chunks_mut(o) {
            row.iter_mut().zip(bias).for_each(|(v, &bv)| *v = *v + bv);
        }
        let value = Tensor::new_unchecked(vec![n, o], out);
        Ok(self.push(value, Op::Linear, vec![x, w, b]))
    }

    /// Per-channel scaling: `x[N,C,H,W] * s[N,C]`.
    pub fn mul_channel(&mut self, x: Var, s: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("mul_channel")?;
        if self.shape(s) != [n, c] {
            return Err(mismatch("mul_channel", self.shape(x), self.shape(s)));
        }
        let sv = self.value(s).data();
        let mut out = self.value(x).data().to_vec();
        for (i, plane) in out.chunks_mut(h * w).enumerate() {
            plane.iter_mut().for_each(|v| *v = *v * sv[i]);
        }
        let value = Tensor::new_unchecked(vec![n, c, h, w], out);
        Ok(self.push(value, Op::MulChannel, vec![x, s]))
    }

    /// Separable "valid" filtering of every plane with `kernel ⊗ kernel`.
    pub fn gauss_valid(&mut self, x: Var, kernel: &[T]) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("gauss_valid")?;
        let k = kernel.len();
        if k == 0 || h < k || w < k {
            return Err(Error::Geometry {
                op: "gauss_valid",
                detail: format!("window {k} larger than {h}x{w}"),
            });
        }
        let out = sep_valid(self.value(x).data(), n * c, h, w, kernel);
        let value = Tensor::new_unchecked(vec![n, c, h - k + 1, w - k + 1], out);
        Ok(self.push(
            value,
            Op::GaussValid {
                kernel: kernel.to_vec(),
            },
            vec![x],
        ))
    }

    // ---- backward --------------------------------------------------------

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Grads { grads, leaf_params: Vec::new() });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf | Op::Detached) {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            let needs: Vec<bool> = node.parents.iter().map(|p| self.nodes[p.0].requires_grad).collect();
            let parent_grads = self.local_backward(i, &gout, &needs);
            for ((p, g), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                let Some(g) = g else { continue };
                if !need {
                    continue;
                }
                match &mut grads[p.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        let leaf_params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|id| (id, Var(i))))
            .collect();
        Ok(Grads { grads, leaf_params })
    }

    fn pv(&self, i: usize, k: usize) -> &Tensor<T> {
        &self.nodes[self.nodes[i].parents[k].0].value
    }

    fn local_backward(&self, i: usize, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let node = &self.nodes[i];
        debug_assert_eq!(g.len(), node.value.numel(), "gradient extent at node {i} ({:?})", node.value.shape());
        let y = node.value.data();
        let elementwise = |f: &dyn Fn(usize) -> T| Some((0..g.len()).map(f).collect::<Vec<T>>());
        match &node.op {
            Op::Leaf | Op::Detached => vec![],
            Op::Conv2d { win, cols } => {
                let x = self.pv(i, 0);
                let w = self.pv(i, 1);
                let [n, c, h, wd] = x.dims4("conv2d").unwrap();
                let [_, k, ho, wo] = node.value.dims4("conv2d").unwrap();
                let ncols = n * ho * wo;
                let kk = win.kh * win.kw;
                let dout_cn = kernels::nchw_to_cn(g, n, k, ho * wo);
                let dx = needs[0].then(|| {
                    let mut dcols = vec![T::zero(); c * kk * ncols];
                    kernels::gemm(
                        T::one(),
                        MatRef::new(w.data(), k, c * kk).t(),
                        MatRef::new(&dout_cn, k, ncols),
                        T::zero(),
                        &mut dcols,
                    );
                    kernels::col2im(&dcols, n, c, h, wd, *win, ho, wo)
                });
                let dw = needs[1].then(|| {
                    let mut dw = vec![T::zero(); k * c * kk];
                    kernels::gemm(
                        T::one(),
                        MatRef::new(&dout_cn, k, ncols),
                        MatRef::new(cols, c * kk, ncols).t(),
                        T::zero(),
                        &mut dw,
                    );
                    dw
                });
                let db = needs[2].then(|| dout_cn.chunks(ncols).map(|r| r.iter().copied().sum()).collect());
                vec![dx, dw, db]
            }
            Op::ConvT2d { win, x_cn } => {
                let w = self.pv(i, 1);
                let [n, cin, hi, wi] = self.pv(i, 0).dims4("conv_transpose2d").unwrap();
                let [_, cout, ho, wo] = node.value.dims4("conv_transpose2d").unwrap();
                let kk = win.kh * win.kw;
                let ncols = n * hi * wi;
                let dcols = if needs[0] || needs[1] {
                    kernels::im2col(g, n, cout, ho, wo, *win, hi, wi)
                } else {
                    Vec::new()
                };
                let dx = needs[0].then(|| {
                    let mut dx_cn = vec![T::zero(); cin * ncols];
                    kernels::gemm(
                        T::one(),
                        MatRef::new(w.data(), cin, cout * kk),
                        MatRef::new(&dcols, cout * kk, ncols),
                        T::zero(),
                        &mut dx_cn,
                    );
                    kernels::cn_to_nchw(&dx_cn, n, cin, hi * wi)
                });
                let dw = needs[1].then(|| {
                    let mut dw = vec![T::zero(); cin * cout * kk];
                    kernels::gemm(
                        T::one(),
                        MatRef::new(x_cn, cin, ncols),
                        MatRef::new(&dcols, cout * kk, ncols).t(),
                        T::zero(),
                        &mut dw,
                    );
                    dw
                });
                let db = needs[2].then(|| channel_sums(g, n, cout, ho * wo));
                vec![dx, dw, db]
            }
            Op::BatchNorm { xhat, inv_std, train } => {
                let [n, c, h, w] = node.value.dims4("batch_norm").unwrap();
                let hw = h * w;
                let gamma = self.pv(i, 1).data();
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for (p, plane) in g.chunks(hw).enumerate() {
                    let ci = p % c;
                    for (j, &gv) in plane.iter().enumerate() {
                        sum_g[ci] = sum_g[ci] + gv;
                        sum_gx[ci] = sum_gx[ci] + gv * xhat[p * hw + j];
                    }
                }
                let dx = needs[0].then(|| {
                    let m = T::from_usize(n * hw).unwrap();
                    let mut dx = vec![T::zero(); g.len()];
                    for (p, plane) in g.chunks(hw).enumerate() {
                        let ci = p % c;
                        let scale = gamma[ci] * inv_std[ci];
                        for (j, &gv) in plane.iter().enumerate() {
                            dx[p * hw + j] = if *train {
                                scale * (gv - sum_g[ci] / m - xhat[p * hw + j] * sum_gx[ci] / m)
                            } else {
                                scale * gv
                            };
                        }
                    }
                    dx
                });
                vec![dx, needs[1].then_some(sum_gx), needs[2].then_some(sum_g)]
            }
            Op::Act(kind) => {
                let x = self.pv(i, 0).data();
                let dx = match *kind {
                    Activation::Relu => elementwise(&|j| if x[j] > T::zero() { g[j] } else { T::zero() }),
                    Activation::LeakyRelu(s) => {
                        let s = T::lit(s);
                        elementwise(&|j| if x[j] >= T::zero() { g[j] } else { s * g[j] })
                    }
                    Activation::Tanh => elementwise(&|j| g[j] * (T::one() - y[j] * y[j])),
                    Activation::Sigmoid => elementwise(&|j| g[j] * y[j] * (T::one() - y[j])),
                };
                vec![dx]
            }
            Op::Dropout { mask } => vec![elementwise(&|j| g[j] * mask[j])],
            Op::Add => vec![needs[0].then(|| g.to_vec()), needs[1].then(|| g.to_vec())],
            Op::Sub => vec![needs[0].then(|| g.to_vec()), needs[1].then(|| g.iter().map(|&v| -v).collect())],
            Op::Mul => {
                let (a, b) = (self.pv(i, 0).data(), self.pv(i, 1).data());
                vec![
                    if needs[0] { elementwise(&|j| g[j] * b[j]) } else { None },
                    if needs[1] { elementwise(&|j| g[j] * a[j]) } else { None },
                ]
            }
            Op::Div => {
                let (a, b) = (self.pv(i, 0).data(), self.pv(i, 1).data());
                vec![
                    if needs[0] { elementwise(&|j| g[j] / b[j]) } else { None },
                    if needs[1] { elementwise(&|j| -g[j] * a[j] / (b[j] * b[j])) } else { None },
                ]
            }
            Op::AddScalar | Op::Reshape => vec![Some(g.to_vec())],
            Op::MulScalar(c) => vec![elementwise(&|j| g[j] * *c)],
            Op::Abs => {
                let x = self.pv(i, 0).data();
                vec![elementwise(&|j| {
                    if x[j] > T::zero() {
                        g[j]
                    } else if x[j] < T::zero() {
                        -g[j]
                    } else {
                        T::zero()
                    }
                })]
            }
            Op::NegLogClamp { lo, hi } => {
                let x = self.pv(i, 0).data();
                vec![elementwise(&|j| {
                    if x[j] >= *lo && x[j] <= *hi {
                        -g[j] / x[j]
                    } else {
                        T::zero()
                    }
                })]
            }
            Op::Sum => vec![Some(vec![g[0]; self.pv(i, 0).numel()])],
            Op::Mean => {
                let n = self.pv(i, 0).numel();
                vec![Some(vec![g[0] / T::from_usize(n).unwrap(); n])]
            }
            Op::Concat => {
                let [n, ca, h, w] = self.pv(i, 0).dims4("concat").unwrap();
                let cb = self.pv(i, 1).shape()[1];
                let hw = h * w;
                let (mut da, mut db) = (Vec::new(), Vec::new());
                for ni in 0..n {
                    let base = ni * (ca + cb) * hw;
                    if needs[0] {
                        da.extend_from_slice(&g[base..base + ca * hw]);
                    }
                    if needs[1] {
                        db.extend_from_slice(&g[base + ca * hw..base + (ca + cb) * hw]);
                    }
                }
                vec![needs[0].then_some(da), needs[1].then_some(db)]
            }
            Op::PadRB => {
                let [n, c, h, w] = self.pv(i, 0).dims4("pad").unwrap();
                let [_, _, h2, w2] = node.value.dims4("pad").unwrap();
                let mut dx = Vec::with_capacity(n * c * h * w);
                for plane in 0..n * c {
                    for yy in 0..h {
                        dx.extend_from_slice(&g[(plane * h2 + yy) * w2..(plane * h2 + yy) * w2 + w]);
                    }
                }
                vec![Some(dx)]
            }
            Op::BatchMatMul { ta, tb } => {
                let (sa, sb) = (self.pv(i, 0).shape(), self.pv(i, 1).shape());
                let (da, db) = (self.pv(i, 0).data(), self.pv(i, 1).data());
                let so = node.value.shape();
                let (bsz, m, nn) = (so[0], so[1], so[2]);
                let (stride_a, stride_b) = (sa[1] * sa[2], sb[1] * sb[2]);
                let mut ga = needs[0].then(|| vec![T::zero(); da.len()]);
                let mut gb = needs[1].then(|| vec![T::zero(); db.len()]);
                for bi in 0..bsz {
                    let av = MatRef::new(&da[bi * stride_a..(bi + 1) * stride_a], sa[1], sa[2]);
                    let bv = MatRef::new(&db[bi * stride_b..(bi + 1) * stride_b], sb[1], sb[2]);
                    let gv = MatRef::new(&g[bi * m * nn..(bi + 1) * m * nn], m, nn);
                    let op_a = if *ta { av.t() } else { av };
                    let op_b = if *tb { bv.t() } else { bv };
                    if let Some(ga) = ga.as_mut() {
                        let dst = &mut ga[bi * stride_a..(bi + 1) * stride_a];
                        if *ta {
                            kernels::gemm(T::one(), op_b, gv.t(), T::zero(), dst);
                        } else {
                            kernels::gemm(T::one(), gv, op_b.t(), T::zero(), dst);
                        }
                    }
                    if let Some(gb) = gb.as_mut() {
                        let dst = &mut gb[bi * stride_b..(bi + 1) * stride_b];
                        if *tb {
                            kernels::gemm(T::one(), gv.t(), op_a, T::zero(), dst);
                        } else {
                            kernels::gemm(T::one(), op_a.t(), gv, T::zero(), dst);
                        }
                    }
                }
                vec![ga, gb]
            }
            Op::Softmax => {
                let last = *node.value.shape().last().unwrap();
                let mut dx = vec![T::zero(); g.len()];
                for ((dr, gr), yr) in dx.chunks_mut(last).zip(g.chunks(last)).zip(y.chunks(last)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((d, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                        *d = yv * (gv - dot);
                    }
                }
                vec![Some(dx)]
            }
            Op::ScaleBy => {
                let x = self.pv(i, 0).data();
                let s = self.pv(i, 1).item();
                vec![
                    if needs[0] { elementwise(&|j| g[j] * s) } else { None },
                    needs[1].then(|| vec![g.iter().zip(x).map(|(&a, &b)| a * b).sum()]),
                ]
            }
            Op::MeanSpatial => {
                let [_, _, h, w] = self.pv(i, 0).dims4("mean_spatial").unwrap();
                let hw = h * w;
                let inv = T::one() / T::from_usize(hw).unwrap();
                vec![Some(g.iter().flat_map(|&v| std::iter::repeat(v * inv).take(hw)).collect())]
            }
            Op::Linear => {
                let x = self.pv(i, 0);
                let w = self.pv(i, 1);
                let (n, inp) = (x.shape()[0], x.shape()[1]);
                let o = w.shape()[0];
                let gv = MatRef::new(g, n, o);
                let dx = needs[0].then(|| {
                    let mut dx = vec![T::zero(); n * inp];
                    kernels::gemm(T::one(), gv, MatRef::new(w.data(), o, inp), T::zero(), &mut dx);
                    dx
                });
                let dw = needs[1].then(|| {
                    let mut dw = vec![T::zero(); o * inp];
                    kernels::gemm(T::one(), gv.t(), MatRef::new(x.data(), n, inp), T::zero(), &mut dw);
                    dw
                });
                let db = needs[2].then(|| {
                    let mut db = vec![T::zero(); o];
                    for row in g.chunks(o) {
                        db.iter_mut().zip(row).for_each(|(a, &b)| *a = *a + b);
                    }
                    db
                });
                vec![dx, dw, db]
            }
            Op::MulChannel => {
                let x = self.pv(i, 0);
                let [_, _, h, w] = x.dims4("mul_channel").unwrap();
                let hw = h * w;
                let s = self.pv(i, 1).data();
                let dx = needs[0].then(|| {
                    let mut dx = g.to_vec();
                    for (p, plane) in dx.chunks_mut(hw).enumerate() {
                        plane.iter_mut().for_each(|v| *v = *v * s[p]);
                    }
                    dx
                });
                let ds = needs[1].then(|| {
                    g.chunks(hw)
                        .zip(x.data().chunks(hw))
                        .map(|(gp, xp)| gp.iter().zip(xp).map(|(&a, &b)| a * b).sum())
                        .collect()
                });
                vec![dx, ds]
            }
            Op::GaussValid { kernel } => {
                let [n, c, h, w] = self.pv(i, 0).dims4("gauss_valid").unwrap();
                vec![Some(sep_valid_adjoint(g, n * c, h, w, kernel))]
            }
        }
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
    leaf_params: Vec<(ParamId, Var)>,
}

impl<T: Element> Grads<T> {
    /// Gradient w.r.t. `v`, if any flowed into it.
    pub fn get(&self, graph: &Graph<T>, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new_unchecked(graph.shape(v).to_vec(), g.clone()))
    }

    /// Gradients of every bound parameter that received one. A parameter
    /// bound more than once has its contributions summed.
    pub fn params(&self, graph: &Graph<T>) -> Vec<(ParamId, Tensor<T>)> {
        self.clone_params().into_params(graph)
    }

    /// As [`Grads::params`], moving the buffers instead of copying them.
    pub fn into_params(mut self, graph: &Graph<T>) -> Vec<(ParamId, Tensor<T>)> {
        let mut out: Vec<(ParamId, Tensor<T>)> = Vec::new();
        for &(id, v) in &self.leaf_params {
            let Some(g) = self.grads[v.0].take() else { continue };
            match out.iter_mut().find(|(pid, _)| *pid == id) {
                Some((_, acc)) => {
                    let acc = acc.data_mut();
                    acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b);
                }
                None => out.push((id, Tensor::new_unchecked(graph.shape(v).to_vec(), g))),
            }
        }
        out.sort_by_key(|(id, _)| *id);
        out
    }

    fn clone_params(&self) -> Self {
        let mut grads: Vec<Option<Vec<T>>> = (0..self.grads.len()).map(|_| None).collect();
        for &(_, v) in &self.leaf_params {
            grads[v.0] = self.grads[v.0].clone();
        }
        Self {
            grads,
            leaf_params: self.leaf_params.clone(),
        }
    }
}

fn sigmoid<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn channel_sums<T: Element>(g: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c];
    for ni in 0..n {
        for ci in 0..c {
            out[ci] = out[ci] + g[(ni * c + ci) * hw..(ni * c + ci + 1) * hw].iter().copied().sum::<T>();
        }
    }
    out
}

fn sep_valid<T: Element>(x: &[T], planes: usize, h: usize, w: usize, k: &[T]) -> Vec<T> {
    let (ho, wo) = (h - k.len() + 1, w - k.len() + 1);
    let mut tmp = vec![T::zero(); h * wo];
    let mut out = vec![T::zero(); planes * ho * wo];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for yy in 0..h {
            for xx in 0..wo {
                tmp[yy * wo + xx] = k.iter().enumerate().map(|(j, &kv)| src[yy * w + xx + j] * kv).sum();
            }
        }
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for yy in 0..ho {
            for xx in 0..wo {
                dst[yy * wo + xx] = k.iter().enumerate().map(|(j, &kv)| tmp[(yy + j) * wo + xx] * kv).sum();
            }
        }
    }
    out
}

fn sep_valid_adjoint<T: Element>(g: &[T], planes: usize, h: usize, w: usize, k: &[T]) -> Vec<T> {
    let (ho, wo) = (h - k.len() + 1, w - k.len() + 1);
    let mut dx = vec![T::zero(); planes * h * w];
    let mut dtmp = vec![T::zero(); h * wo];
    for p in 0..planes {
        dtmp.iter_mut().for_each(|v| *v = T::zero());
        let gp = &g[p * ho * wo..(p + 1) * ho * wo];
        for yy in 0..ho {
            for xx in 0..wo {
                let gv = gp[yy * wo + xx];
                for (j, &kv) in k.iter().enumerate() {
                    dtmp[(yy + j) * wo + xx] = dtmp[(yy + j) * wo + xx] + gv * kv;
                }
            }
        }
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for yy in 0..h {
            for xx in 0..wo {
                let tv = dtmp[yy * wo + xx];
                for (j, &kv) in k.iter().enumerate() {
                    dst[yy * w + xx + j] = dst[yy * w + xx + j] + tv * kv;
                }
            }
        }
    }
    dx
}
