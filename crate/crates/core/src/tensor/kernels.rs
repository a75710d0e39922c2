//! Low-level dense kernels: strided GEMM, im2col/col2im and layout permutes.
//!
//! Convolutions are lowered to a single GEMM over the whole batch. Feature
//! maps live in NCHW order; the GEMM operands use a channel-major `[C, N*H*W]`
//! layout ("CN" below) so that one multiplication covers every sample.

use super::element::Element;

/// Row-major (or transposed) read-only matrix view.
#[derive(Clone, Copy)]
pub struct MatRef<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: isize,
    cs: isize,
}

impl<'a, T: Element> MatRef<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix view extent");
        Self {
            data,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

/// `c[m,n] = alpha * a[m,k] * b[k,n] + beta * c`, `c` row-major.
pub fn gemm<T: Element>(alpha: T, a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: &mut [T]) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(b.rows, k, "gemm inner extent");
    assert_eq!(c.len(), m * n, "gemm output extent");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v = beta * *v;
        }
        return;
    }
    if skinny(alpha, a, b, beta, c) {
        return;
    }
    // SAFETY: views were constructed with `data.len() == rows * cols` and
    // non-negative strides that index inside that extent (possibly
    // transposed); `c` is a distinct mutable slice of length m*n.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Below this extent a GEMM dimension counts as skinny: a packed kernel then
/// spends more time copying operands than multiplying them, so these shapes
/// stream the large operand once instead.
const SKINNY: usize = 16;

impl<T: Element> MatRef<'_, T> {
    fn at(&self, i: usize, j: usize) -> T {
        self.data[(i as isize * self.rs + j as isize * self.cs) as usize]
    }

    fn to_row_major(self) -> Vec<T> {
        if self.cs == 1 && self.rs == self.cols as isize {
            return self.data.to_vec();
        }
        (0..self.rows).flat_map(|i| (0..self.cols).map(move |j| self.at(i, j))).collect()
    }
}

/// Lane-wise partial sums in a fixed order, so the loop vectorizes while
/// staying deterministic.
fn dot<T: Element>(x: &[T], y: &[T]) -> T {
    const L: usize = 16;
    let mut acc = [T::zero(); L];
    let (xc, yc) = (x.chunks_exact(L), y.chunks_exact(L));
    let tail = xc.remainder().iter().zip(yc.remainder()).fold(T::zero(), |s, (&p, &q)| s + p * q);
    for (p, q) in xc.zip(yc) {
        for l in 0..L {
            acc[l] = acc[l] + p[l] * q[l];
        }
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

fn axpy<T: Element>(s: T, x: &[T], y: &mut [T]) {
    y.iter_mut().zip(x).for_each(|(d, &v)| *d = *d + s * v);
}

fn store<T: Element>(dst: &mut T, alpha: T, v: T, beta: T) {
    *dst = if beta == T::zero() { alpha * v } else { alpha * v + beta * *dst };
}

/// `c = a * b` for `n <= SKINNY`, written row-major into `c`. Needs `a`
/// with contiguous rows or contiguous columns.
fn small_n<T: Element>(a: MatRef<'_, T>, b: MatRef<'_, T>, c: &mut [T]) -> bool {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let bt = b.t().to_row_major();
    if a.cs == 1 {
        for i in 0..m {
            let start = i * a.rs as usize;
            let row = &a.data[start..start + k];
            for j in 0..n {
                c[i * n + j] = dot(row, &bt[j * k..(j + 1) * k]);
            }
        }
    } else if a.rs == 1 {
        let mut ct = vec![T::zero(); n * m];
        for l in 0..k {
            let start = l * a.cs as usize;
            let col = &a.data[start..start + m];
            for j in 0..n {
                axpy(bt[j * k + l], col, &mut ct[j * m..(j + 1) * m]);
            }
        }
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = ct[j * m + i];
            }
        }
    } else {
        return false;
    }
    true
}

/// Handles shapes with one extent at most [`SKINNY`]; returns false to
/// defer to the packed kernel.
fn skinny<T: Element>(alpha: T, a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: &mut [T]) -> bool {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if k <= SKINNY {
        let bk = b.to_row_major();
        for i in 0..m {
            let row = &mut c[i * n..(i + 1) * n];
            if beta == T::zero() {
                row.fill(T::zero());
            } else {
                row.iter_mut().for_each(|v| *v = beta * *v);
            }
            for l in 0..k {
                axpy(alpha * a.at(i, l), &bk[l * n..(l + 1) * n], row);
            }
        }
        return true;
    }
    let mut tmp = vec![T::zero(); m * n];
    if n <= SKINNY {
        if !small_n(a, b, &mut tmp) {
            return false;
        }
        c.iter_mut().zip(&tmp).for_each(|(d, &v)| store(d, alpha, v, beta));
        return true;
    }
    if m <= SKINNY {
        // c^T = b^T a^T has the skinny extent last.
        if !small_n(b.t(), a.t(), &mut tmp) {
            return false;
        }
        for i in 0..m {
            for j in 0..n {
                store(&mut c[i * n + j], alpha, tmp[j * m + i], beta);
            }
        }
        return true;
    }
    false
}

/// Output extent of a strided, padded, dilated window sweep, or `None` when
/// the padded input is smaller than the dilated kernel.
pub fn conv_out_extent(len: usize, k: usize, stride: usize, pad: usize, dilation: usize) -> Option<usize> {
    let span = dilation * (k - 1) + 1;
    let padded = len + 2 * pad;
    if stride == 0 || k == 0 || padded < span {
        return None;
    }
    Some((padded - span) / stride + 1)
}

/// Window geometry shared by im2col and col2im.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

/// Output positions `o` in `0..out` whose tap `o*s - p + t*d` lands in
/// `0..len`, as a half-open range.
fn valid_range(out: usize, len: usize, s: usize, p: usize, offset: usize) -> std::ops::Range<usize> {
    // Need p <= o*s + offset < len + p.
    let lo = p.saturating_sub(offset).div_ceil(s);
    let hi = if len + p > offset { (len + p - offset).div_ceil(s) } else { 0 };
    lo.min(out)..hi.min(out).max(lo.min(out))
}

/// Unfold `x[n,c,h,w]` into `[c*kh*kw, n*ho*wo]`.
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Element>(
    x: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    win: Window,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let ncols = n * ho * wo;
    let mut cols = vec![T::zero(); c * win.kh * win.kw * ncols];
    let (s, p, d) = (win.stride, win.pad, win.dilation);
    for ci in 0..c {
        for ki in 0..win.kh {
            let rows = valid_range(ho, h, s, p, ki * d);
            for kj in 0..win.kw {
                let span = valid_range(wo, w, s, p, kj * d);
                if span.is_empty() {
                    continue;
                }
                let row = (ci * win.kh + ki) * win.kw + kj;
                let dst_row = &mut cols[row * ncols..(row + 1) * ncols];
                for ni in 0..n {
                    let src = &x[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                    for oy in rows.clone() {
                        let iy = oy * s + ki * d - p;
                        let src_row = &src[iy * w..(iy + 1) * w];
                        let dst = &mut dst_row[(ni * ho + oy) * wo..(ni * ho + oy + 1) * wo];
                        let x0 = span.start * s + kj * d - p;
                        if s == 1 {
                            dst[span.clone()].copy_from_slice(&src_row[x0..x0 + span.len()]);
                        } else {
                            for (out, &v) in dst[span.clone()].iter_mut().zip(src_row[x0..].iter().step_by(s)) {
                                *out = v;
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add `[c*kh*kw, n*ho*wo]` back into `[n,c,h,w]`.
#[allow(clippy::too_many_arguments)]
pub fn col2im<T: Element>(
    cols: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    win: Window,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let ncols = n * ho * wo;
    debug_assert_eq!(cols.len(), c * win.kh * win.kw * ncols);
    let mut x = vec![T::zero(); n * c * h * w];
    let (s, p, d) = (win.stride, win.pad, win.dilation);
    for ci in 0..c {
        for ki in 0..win.kh {
            let rows = valid_range(ho, h, s, p, ki * d);
            for kj in 0..win.kw {
                let span = valid_range(wo, w, s, p, kj * d);
                if span.is_empty() {
                    continue;
                }
                let row = (ci * win.kh + ki) * win.kw + kj;
                let src_row = &cols[row * ncols..(row + 1) * ncols];
                for ni in 0..n {
                    let dst = &mut x[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                    for oy in rows.clone() {
                        let iy = oy * s + ki * d - p;
                        let dst_row = &mut dst[iy * w..(iy + 1) * w];
                        let src = &src_row[(ni * ho + oy) * wo + span.start..(ni * ho + oy) * wo + span.end];
                        let x0 = span.start * s + kj * d - p;
                        for (acc, &v) in dst_row[x0..].iter_mut().step_by(s).zip(src) {
                            *acc = *acc + v;
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[n, c, hw]` -> `[c, n*hw]`.
pub fn nchw_to_cn<T: Element>(x: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let src = &x[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
            out[ci * n * hw + ni * hw..ci * n * hw + (ni + 1) * hw].copy_from_slice(src);
        }
    }
    out
}

/// `[c, n*hw]` -> `[n, c, hw]`.
pub fn cn_to_nchw<T: Element>(x: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for ci in 0..c {
        for ni in 0..n {
            let src = &x[ci * n * hw + ni * hw..ci * n * hw + (ni + 1) * hw];
            out[(ni * c + ci) * hw..(ni * c + ci + 1) * hw].copy_from_slice(src);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|l| a[i * k + l] * b[l * n + j]).sum();
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 * 0.5 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect(); // 3x4
        let mut c = vec![0.0; 8];
        gemm(1.0, MatRef::new(&a, 2, 3), MatRef::new(&b, 3, 4), 0.0, &mut c);
        let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| (p - q).abs() < 1e-14);
        assert!(close(&c, &naive_matmul(&a, &b, 2, 3, 4)));

        // a^T stored as 3x2
        let at: Vec<f64> = (0..3).flat_map(|j| (0..2).map(move |i| (i * 3 + j) as f64 * 0.5 - 1.0)).collect();
        let mut c2 = vec![0.0; 8];
        gemm(1.0, MatRef::new(&at, 3, 2).t(), MatRef::new(&b, 3, 4), 0.0, &mut c2);
        assert!(close(&c, &c2));
    }

    #[test]
    fn skinny_paths_match_naive() {
        let fill = |len: usize, seed: f64| -> Vec<f64> { (0..len).map(|v| ((v as f64 + seed) * 0.37).sin()).collect() };
        let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| (p - q).abs() < 1e-12);
        for (m, k, n) in [(1, 40, 37), (37, 40, 1), (33, 3, 41), (50, 70, 8), (8, 70, 50), (20, 1, 20), (17, 17, 17)] {
            let a = fill(m * k, 1.0);
            let b = fill(k * n, 2.0);
            let want = naive_matmul(&a, &b, m, k, n);
            let at: Vec<f64> = (0..k).flat_map(|j| (0..m).map(move |i| (i, j))).map(|(i, j)| a[i * k + j]).collect();
            let bt: Vec<f64> = (0..n).flat_map(|j| (0..k).map(move |i| (i, j))).map(|(i, j)| b[i * n + j]).collect();
            let av = [MatRef::new(&a, m, k), MatRef::new(&at, k, m).t()];
            let bv = [MatRef::new(&b, k, n), MatRef::new(&bt, n, k).t()];
            for &x in &av {
                for &y in &bv {
                    let mut c = vec![0.0; m * n];
                    gemm(1.0, x, y, 0.0, &mut c);
                    assert!(close(&c, &want), "{m}x{k}x{n}");
                    // alpha/beta accumulate onto existing contents.
                    let mut c2 = vec![1.0; m * n];
                    gemm(2.0, x, y, 0.5, &mut c2);
                    let want2: Vec<f64> = want.iter().map(|v| 2.0 * v + 0.5).collect();
                    assert!(close(&c2, &want2), "{m}x{k}x{n} alpha/beta");
                }
            }
        }
    }

    /// Per-element unfold straight from the definition.
    fn naive_im2col(x: &[f64], n: usize, c: usize, h: usize, w: usize, win: Window, ho: usize, wo: usize) -> Vec<f64> {
        let ncols = n * ho * wo;
        let mut cols = vec![0.0; c * win.kh * win.kw * ncols];
        for ci in 0..c {
            for ki in 0..win.kh {
                for kj in 0..win.kw {
                    for ni in 0..n {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let iy = (oy * win.stride + ki * win.dilation) as isize - win.pad as isize;
                                let ix = (ox * win.stride + kj * win.dilation) as isize - win.pad as isize;
                                if (0..h as isize).contains(&iy) && (0..w as isize).contains(&ix) {
                                    let row = (ci * win.kh + ki) * win.kw + kj;
                                    cols[row * ncols + (ni * ho + oy) * wo + ox] =
                                        x[((ni * c + ci) * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    #[test]
    fn im2col_and_col2im_match_definition() {
        for (h, w, k, stride, pad, dilation) in [(7, 5, 3, 1, 1, 1), (9, 9, 4, 2, 1, 1), (12, 11, 3, 2, 6, 6), (6, 6, 3, 2, 9, 9), (5, 8, 2, 3, 0, 2)] {
            let (n, c) = (2, 3);
            let win = Window { kh: k, kw: k, stride, pad, dilation };
            let ho = conv_out_extent(h, k, stride, pad, dilation).unwrap();
            let wo = conv_out_extent(w, k, stride, pad, dilation).unwrap();
            let x: Vec<f64> = (0..n * c * h * w).map(|v| (v as f64 * 0.71).sin()).collect();
            let cols = im2col(&x, n, c, h, w, win, ho, wo);
            assert_eq!(cols, naive_im2col(&x, n, c, h, w, win, ho, wo));
            // Adjointness: <im2col(x), y> == <x, col2im(y)>.
            let y: Vec<f64> = (0..cols.len()).map(|v| (v as f64 * 0.13).cos()).collect();
            let back = col2im(&y, n, c, h, w, win, ho, wo);
            let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn out_extent_rejects_oversized_kernel() {
        assert_eq!(conv_out_extent(2, 5, 1, 0, 1), None);
        assert_eq!(conv_out_extent(12, 3, 2, 6, 6), Some(6));
        assert_eq!(conv_out_extent(96, 4, 2, 1, 1), Some(48));
    }

    #[test]
    fn layout_permutes_invert() {
        let x: Vec<f32> = (0..2 * 3 * 4).map(|v| v as f32).collect();
        let cn = nchw_to_cn(&x, 2, 3, 4);
        assert_eq!(cn[4], 12.0);
        assert_eq!(cn_to_nchw(&cn, 2, 3, 4), x);
    }
}
