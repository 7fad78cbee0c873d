//! Array kernels behind the network layers. Volumes are `[B, C, D, H, W]` in
//! standard layout; flat activations are `[B, N]`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, Array5, ArrayView2, ArrayView4, ArrayViewMut4, Axis};

use super::config::Activation;
use crate::Scalar;

/// Upper bound on the im2col buffer, in elements.
const COL_BUDGET: usize = 1 << 22;

pub fn activate<T: Scalar>(act: Activation, z: T) -> T {
    match act {
        Activation::Linear => z,
        Activation::Relu => z.max(T::zero()),
        Activation::Softplus => z.max(T::zero()) + (-z.abs()).exp().ln_1p(),
    }
}

pub fn activate_grad<T: Scalar>(act: Activation, z: T) -> T {
    match act {
        Activation::Linear => T::one(),
        Activation::Relu => {
            if z > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Activation::Softplus => T::one() / (T::one() + (-z).exp()),
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    cin: usize,
    d: usize,
    h: usize,
    w: usize,
    k: [usize; 3],
    pad: [usize; 3],
}

impl ConvGeom {
    fn new(x_shape: &[usize], k: [usize; 3]) -> Self {
        Self {
            cin: x_shape[0],
            d: x_shape[1],
            h: x_shape[2],
            w: x_shape[3],
            k,
            pad: [(k[0] - 1) / 2, (k[1] - 1) / 2, (k[2] - 1) / 2],
        }
    }

    fn rows(&self) -> usize {
        self.cin * self.k[0] * self.k[1] * self.k[2]
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }

    fn chunk_depth(&self) -> usize {
        (COL_BUDGET / (self.rows() * self.plane()).max(1)).clamp(1, self.d)
    }

    /// Visits every contiguous run shared by the input volume and the im2col
    /// block for output depths `d0..d1`: `(row, col_offset, x_offset, len)`.
    fn for_each_run(&self, d0: usize, d1: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (h, w) = (self.h as isize, self.w as isize);
        let [kd, kh, kw] = self.k;
        let [pd, ph, pw] = self.pad.map(|p| p as isize);
        let p_cols = (d1 - d0) * self.plane();
        let mut row = 0;
        for ci in 0..self.cin {
            for a in 0..kd {
                for b in 0..kh {
                    for c in 0..kw {
                        let dx = c as isize - pw;
                        let x_lo = (-dx).max(0);
                        let x_hi = (w - dx).min(w);
                        if x_lo < x_hi {
                            for od in d0..d1 {
                                let sd = od as isize + a as isize - pd;
                                if sd < 0 || sd >= self.d as isize {
                                    continue;
                                }
                                for oy in 0..h {
                                    let sy = oy + b as isize - ph;
                                    if sy < 0 || sy >= h {
                                        continue;
                                    }
                                    let col_off = row * p_cols + ((od - d0) * self.h + oy as usize) * self.w + x_lo as usize;
                                    let x_off = ((ci * self.d + sd as usize) * self.h + sy as usize) * self.w
                                        + (x_lo + dx) as usize;
                                    f(row, col_off, x_off, (x_hi - x_lo) as usize);
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, x: &[T], d0: usize, d1: usize, col: &mut [T]) {
        col.fill(T::zero());
        self.for_each_run(d0, d1, |_, co, xo, len| {
            col[co..co + len].copy_from_slice(&x[xo..xo + len]);
        });
    }

    fn col2im<T: Scalar>(&self, col: &[T], d0: usize, d1: usize, dx: &mut [T]) {
        self.for_each_run(d0, d1, |_, co, xo, len| {
            for (t, &v) in dx[xo..xo + len].iter_mut().zip(&col[co..co + len]) {
                *t += v;
            }
        });
    }
}

/// Same-padded stride-1 3D convolution for one sample. `x` is `[Cin, D, H, W]`,
/// `weight` is `[Cout, Cin*kd*kh*kw]`; returns pre-activations `[Cout, D, H, W]`.
pub fn conv3d_sample<T: Scalar>(
    x: ArrayView4<T>,
    weight: ArrayView2<T>,
    bias: &Array1<T>,
    kernel: [usize; 3],
    mut out: ArrayViewMut4<T>,
) {
    let x = x.as_standard_layout();
    let g = ConvGeom::new(x.shape(), kernel);
    let xs = x.as_slice().expect("standard layout");
    let cout = weight.nrows();
    let plane = g.plane();
    let step = g.chunk_depth();
    let mut d0 = 0;
    while d0 < g.d {
        let d1 = (d0 + step).min(g.d);
        let p = (d1 - d0) * plane;
        let mut col = Array2::<T>::zeros((g.rows(), p));
        g.im2col(xs, d0, d1, col.as_slice_mut().unwrap());
        let mut r = Array2::<T>::zeros((cout, p));
        general_mat_mul(T::one(), &weight, &col, T::zero(), &mut r);
        for co in 0..cout {
            let b = bias[co];
            let mut dst = out.slice_mut(s![co, d0..d1, .., ..]);
            let src = r.row(co);
            for (t, &v) in dst.iter_mut().zip(src.iter()) {
                *t = v + b;
            }
        }
        d0 = d1;
    }
}

/// Backward pass of [`conv3d_sample`]. `dz` is the gradient at the
/// pre-activation. Accumulates into `dw`/`db`; writes `dx` when given.
pub fn conv3d_sample_backward<T: Scalar>(
    x: ArrayView4<T>,
    weight: ArrayView2<T>,
    kernel: [usize; 3],
    dz: ArrayView4<T>,
    dw: &mut Array2<T>,
    db: &mut Array1<T>,
    mut dx: Option<&mut [T]>,
) {
    let x = x.as_standard_layout();
    let g = ConvGeom::new(x.shape(), kernel);
    let xs = x.as_slice().expect("standard layout");
    let cout = weight.nrows();
    let plane = g.plane();
    let step = g.chunk_depth();
    for co in 0..cout {
        db[co] += dz.index_axis(Axis(0), co).sum();
    }
    let mut d0 = 0;
    while d0 < g.d {
        let d1 = (d0 + step).min(g.d);
        let p = (d1 - d0) * plane;
        let mut col = Array2::<T>::zeros((g.rows(), p));
        g.im2col(xs, d0, d1, col.as_slice_mut().unwrap());
        let mut dzc = Array2::<T>::zeros((cout, p));
        for co in 0..cout {
            let src = dz.slice(s![co, d0..d1, .., ..]);
            for (t, &v) in dzc.row_mut(co).iter_mut().zip(src.iter()) {
                *t = v;
            }
        }
        general_mat_mul(T::one(), &dzc, &col.t(), T::one(), dw);
        if let Some(dx) = dx.as_deref_mut() {
            general_mat_mul(T::one(), &weight.t(), &dzc, T::zero(), &mut col);
            g.col2im(col.as_slice().unwrap(), d0, d1, dx);
        }
        d0 = d1;
    }
}

/// Max pooling with window equal to stride, keeping partial edge windows.
/// Returns the pooled volume and, per output element, the flat input index
/// of its maximum.
pub fn maxpool3d<T: Scalar>(x: &Array5<T>, size: [usize; 3]) -> (Array5<T>, Vec<usize>) {
    let x = x.as_standard_layout();
    let [b, c, d, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3], x.shape()[4]];
    let [sd, sh, sw] = size;
    let (od, oh, ow) = (d.div_ceil(sd), h.div_ceil(sh), w.div_ceil(sw));
    let xs = x.as_slice().unwrap();
    let mut out = Vec::with_capacity(b * c * od * oh * ow);
    let mut arg = Vec::with_capacity(out.capacity());
    for bc in 0..b * c {
        let base = bc * d * h * w;
        for i in 0..od {
            for j in 0..oh {
                for k in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_idx = usize::MAX;
                    for zd in i * sd..((i + 1) * sd).min(d) {
                        for zh in j * sh..((j + 1) * sh).min(h) {
                            for zw in k * sw..((k + 1) * sw).min(w) {
                                let idx = base + (zd * h + zh) * w + zw;
                                // NaN never wins, but a window still needs an index.
                                if xs[idx] > best || best_idx == usize::MAX {
                                    best = xs[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_idx);
                }
            }
        }
    }
    let out = Array5::from_shape_vec((b, c, od, oh, ow), out).unwrap();
    (out, arg)
}

pub fn maxpool3d_backward<T: Scalar>(dy: &Array5<T>, argmax: &[usize], in_shape: [usize; 5]) -> Array5<T> {
    let mut dx = Array5::<T>::zeros(in_shape);
    let dxs = dx.as_slice_mut().unwrap();
    for (&i, &g) in argmax.iter().zip(dy.as_standard_layout().iter()) {
        dxs[i] += g;
    }
    dx
}

/// Statistics retained by a training-mode batch-norm pass.
#[derive(Debug, Clone)]
pub struct NormCache<T> {
    pub xhat: Array3<T>,
    pub inv_std: Array1<T>,
}

/// Per-channel batch mean and biased variance of `x` viewed as `[B, C, S]`.
pub fn channel_moments<T: Scalar>(x: &Array3<T>) -> (Array1<T>, Array1<T>) {
    let c = x.shape()[1];
    let m = T::from_usize_lossy(x.shape()[0] * x.shape()[2]);
    let mut mean = Array1::<T>::zeros(c);
    let mut var = Array1::<T>::zeros(c);
    for ch in 0..c {
        let lane = x.index_axis(Axis(1), ch);
        let mu = lane.sum() / m;
        mean[ch] = mu;
        var[ch] = lane.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / m;
    }
    (mean, var)
}

pub fn batch_norm_train<T: Scalar>(
    x: &Array3<T>,
    gamma: &Array1<T>,
    beta: &Array1<T>,
    eps: T,
) -> (Array3<T>, NormCache<T>, Array1<T>, Array1<T>) {
    let (mean, var) = channel_moments(x);
    let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
    let mut xhat = x.clone();
    for ((mut lane, &mu), &is) in xhat.axis_iter_mut(Axis(1)).zip(&mean).zip(&inv_std) {
        lane.mapv_inplace(|v| (v - mu) * is);
    }
    let mut y = xhat.clone();
    for ((mut lane, &g), &b) in y.axis_iter_mut(Axis(1)).zip(gamma).zip(beta) {
        lane.mapv_inplace(|v| g * v + b);
    }
    (y, NormCache { xhat, inv_std }, mean, var)
}

pub fn batch_norm_eval<T: Scalar>(
    x: &Array3<T>,
    gamma: &Array1<T>,
    beta: &Array1<T>,
    mean: &Array1<T>,
    var: &Array1<T>,
    eps: T,
) -> Array3<T> {
    let mut y = x.clone();
    for (ch, mut lane) in y.axis_iter_mut(Axis(1)).enumerate() {
        let scale = gamma[ch] / (var[ch] + eps).sqrt();
        let shift = beta[ch] - mean[ch] * scale;
        lane.mapv_inplace(|v| v * scale + shift);
    }
    y
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batch_norm_backward<T: Scalar>(
    dy: &Array3<T>,
    cache: &NormCache<T>,
    gamma: &Array1<T>,
) -> (Array3<T>, Array1<T>, Array1<T>) {
    let c = dy.shape()[1];
    let m = T::from_usize_lossy(dy.shape()[0] * dy.shape()[2]);
    let mut dx = Array3::<T>::zeros(dy.raw_dim());
    let mut dgamma = Array1::<T>::zeros(c);
    let mut dbeta = Array1::<T>::zeros(c);
    for ch in 0..c {
        let g = dy.index_axis(Axis(1), ch);
        let xh = cache.xhat.index_axis(Axis(1), ch);
        let sum_g = g.sum();
        let sum_gx = g.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>();
        dbeta[ch] = sum_g;
        dgamma[ch] = sum_gx;
        let k = gamma[ch] * cache.inv_std[ch] / m;
        let mut out = dx.index_axis_mut(Axis(1), ch);
        for ((o, &gi), &xi) in out.iter_mut().zip(g.iter()).zip(xh.iter()) {
            *o = k * (m * gi - sum_g - xi * sum_gx);
        }
    }
    (dx, dgamma, dbeta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array, Array4};

    /// Direct nested-loop convolution with zero padding.
    fn naive_conv(x: &Array4<f64>, w: &Array5<f64>, b: &Array1<f64>) -> Array4<f64> {
        let (cin, d, h, wd) = x.dim();
        let (cout, _, kd, kh, kw) = w.dim();
        let (pd, ph, pw) = ((kd - 1) / 2, (kh - 1) / 2, (kw - 1) / 2);
        Array4::from_shape_fn((cout, d, h, wd), |(co, i, j, k)| {
            let mut acc = b[co];
            for ci in 0..cin {
                for a in 0..kd {
                    for bb in 0..kh {
                        for c in 0..kw {
                            let (si, sj, sk) = (i + a, j + bb, k + c);
                            if si < pd || sj < ph || sk < pw {
                                continue;
                            }
                            let (si, sj, sk) = (si - pd, sj - ph, sk - pw);
                            if si < d && sj < h && sk < wd {
                                acc += w[[co, ci, a, bb, c]] * x[[ci, si, sj, sk]];
                            }
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn conv_matches_naive() {
        let x = Array::from_shape_fn((2, 7, 5, 6), |(a, b, c, d)| ((a * 31 + b * 7 + c * 3 + d) % 11) as f64 - 5.0);
        for k in [[3, 3, 3], [4, 1, 1], [1, 2, 3], [7, 5, 5]] {
            let w = Array::from_shape_fn((3, 2, k[0], k[1], k[2]), |(a, b, c, d, e)| {
                ((a + 2 * b + 3 * c + 5 * d + 7 * e) % 5) as f64 * 0.1 - 0.2
            });
            let bias = Array1::from(vec![0.5, -1.0, 0.25]);
            let expected = naive_conv(&x, &w, &bias);
            let w2 = w.view().into_shape_with_order((3, 2 * k.iter().product::<usize>())).unwrap();
            let mut out = Array4::<f64>::zeros((3, 7, 5, 6));
            conv3d_sample(x.view(), w2, &bias, k, out.view_mut());
            let err = (&out - &expected).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            assert!(err < 1e-12, "kernel {k:?} err {err}");
        }
    }

    #[test]
    fn pool_keeps_partial_windows() {
        let x = Array5::from_shape_fn((1, 1, 3, 3, 1), |(_, _, d, h, _)| (d * 3 + h) as f64);
        let (y, arg) = maxpool3d(&x, [2, 2, 1]);
        assert_eq!(y.shape(), &[1, 1, 2, 2, 1]);
        assert_eq!(y.iter().copied().collect::<Vec<_>>(), vec![4.0, 5.0, 7.0, 8.0]);
        let dx = maxpool3d_backward(&Array5::<f64>::ones(y.raw_dim()), &arg, [1, 1, 3, 3, 1]);
        assert_eq!(dx.sum(), 4.0);
    }

    #[test]
    fn batch_norm_of_constant_is_shift() {
        let x = Array3::from_elem((4, 2, 3), 7.0);
        let gamma = Array1::from(vec![2.0, 3.0]);
        let beta = Array1::from(vec![0.5, -0.5]);
        let (y, ..) = batch_norm_train(&x, &gamma, &beta, 1e-5);
        assert!(y.index_axis(Axis(1), 0).iter().all(|&v| v == 0.5));
        assert!(y.index_axis(Axis(1), 1).iter().all(|&v| v == -0.5));
    }

    #[test]
    fn softplus_is_stable() {
        assert!((activate(Activation::Softplus, 800.0f64) - 800.0).abs() < 1e-9);
        assert!(activate(Activation::Softplus, -800.0f64) >= 0.0);
        assert!((activate_grad(Activation::Softplus, 0.0f64) - 0.5).abs() < 1e-15);
    }
}
