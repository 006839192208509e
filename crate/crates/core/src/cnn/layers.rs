//! Convolution, batch normalization and pooling kernels with their
//! backward passes. Tensors are `N × C × H × W` in standard layout.

use ndarray::{linalg::general_mat_mul, Array1, Array2, Array4, ArrayView2, ArrayView3, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::{from_usize, lit, Real};

pub const KERNEL: usize = 3;

/// Output spatial size of a 3×3, padding-1 convolution.
pub fn conv_out_dim(h: usize, w: usize, stride: usize) -> Result<(usize, usize)> {
    match stride {
        1 => Ok((h, w)),
        2 if h % 2 == 0 && w % 2 == 0 => Ok((h / 2, w / 2)),
        2 => Err(Error::Config(format!("stride-2 convolution needs even spatial dims, got {h}x{w}"))),
        s => Err(Error::Config(format!("unsupported stride {s}"))),
    }
}

fn im2col<T: Real>(x: ArrayView3<T>, stride: usize, oh: usize, ow: usize) -> Array2<T> {
    let (cin, h, w) = x.dim();
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let mut cols = Array2::zeros((cin * KERNEL * KERNEL, oh * ow));
    let cs = cols.as_slice_mut().expect("fresh array");
    for c in 0..cin {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * KERNEL + ky) * KERNEL + kx;
                let dst = &mut cs[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &xs[(c * h + iy as usize) * w..(c * h + iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * ow + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &Array2<T>, cin: usize, h: usize, w: usize, stride: usize, oh: usize, ow: usize) -> Vec<T> {
    let mut out = vec![T::zero(); cin * h * w];
    let cs = cols.as_slice().expect("standard layout");
    for c in 0..cin {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * KERNEL + ky) * KERNEL + kx;
                let src = &cs[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (c * h + iy as usize) * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            out[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

fn weight_matrix<T: Real>(weight: &Array4<T>) -> ArrayView2<'_, T> {
    let (co, ci, kh, kw) = weight.dim();
    weight
        .view()
        .into_shape_with_order((co, ci * kh * kw))
        .expect("weights in standard layout")
}

/// 3×3 convolution with zero padding 1.
pub fn conv2d_forward<T: Real>(x: &Array4<T>, weight: &Array4<T>, bias: &Array1<T>, stride: usize) -> Result<Array4<T>> {
    let (n, cin, h, w) = x.dim();
    let (cout, wcin, _, _) = weight.dim();
    if wcin != cin {
        return Err(Error::Config(format!("convolution expects {wcin} input channels, got {cin}")));
    }
    let (oh, ow) = conv_out_dim(h, w, stride)?;
    let wm = weight_matrix(weight);
    let outs: Vec<Array2<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let cols = im2col(x.index_axis(Axis(0), i), stride, oh, ow);
            let mut y = Array2::zeros((cout, oh * ow));
            for (mut row, &b) in y.rows_mut().into_iter().zip(bias.iter()) {
                row.fill(b);
            }
            general_mat_mul(T::one(), &wm, &cols, T::one(), &mut y);
            y
        })
        .collect();
    let mut out = Array4::zeros((n, cout, oh, ow));
    for (i, y) in outs.into_iter().enumerate() {
        out.index_axis_mut(Axis(0), i)
            .assign(&y.into_shape_with_order((cout, oh, ow)).expect("contiguous"));
    }
    Ok(out)
}

/// Gradients of a convolution: `(dx, dweight, dbias)`.
pub fn conv2d_backward<T: Real>(
    x: &Array4<T>,
    weight: &Array4<T>,
    dy: &Array4<T>,
    stride: usize,
) -> (Array4<T>, Array4<T>, Array1<T>) {
    let (n, cin, h, w) = x.dim();
    let (cout, _, kh, kw) = weight.dim();
    let (_, _, oh, ow) = dy.dim();
    let wm = weight_matrix(weight);
    let parts: Vec<(Vec<T>, Array2<T>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let cols = im2col(x.index_axis(Axis(0), i), stride, oh, ow);
            let dyi = dy.index_axis(Axis(0), i);
            let dyi = dyi.as_standard_layout();
            let dym = dyi.view().into_shape_with_order((cout, oh * ow)).expect("contiguous");
            let mut dw = Array2::zeros((cout, cin * kh * kw));
            general_mat_mul(T::one(), &dym, &cols.t(), T::zero(), &mut dw);
            let mut dcols = Array2::zeros((cin * kh * kw, oh * ow));
            general_mat_mul(T::one(), &wm.t(), &dym, T::zero(), &mut dcols);
            (col2im(&dcols, cin, h, w, stride, oh, ow), dw)
        })
        .collect();
    let mut dx = Array4::zeros((n, cin, h, w));
    let mut dw = Array2::zeros((cout, cin * kh * kw));
    for (i, (dxi, dwi)) in parts.into_iter().enumerate() {
        dx.index_axis_mut(Axis(0), i)
            .assign(&ndarray::Array3::from_shape_vec((cin, h, w), dxi).expect("shape"));
        dw += &dwi;
    }
    let db = dy.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
    (dx, dw.into_shape_with_order((cout, cin, kh, kw)).expect("shape"), db)
}

/// Cached quantities of a batch-norm forward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T: Real> {
    pub xhat: Array4<T>,
    pub inv_std: Array1<T>,
    /// Batch mean and unbiased variance (training mode only).
    pub batch_stats: Option<(Array1<T>, Array1<T>)>,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel normalization; uses batch statistics when `running` is `None`.
pub fn batchnorm_forward<T: Real>(
    x: &Array4<T>,
    gamma: &Array1<T>,
    beta: &Array1<T>,
    running: Option<(&Array1<T>, &Array1<T>)>,
) -> (Array4<T>, BnCache<T>) {
    let (n, c, h, w) = x.dim();
    let m = n * h * w;
    let eps = lit::<T>(BN_EPS);
    let (mean, var, batch_stats) = match running {
        Some((rm, rv)) => (rm.clone(), rv.clone(), None),
        None => {
            let count = from_usize::<T>(m);
            let mean = x.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0)) / count;
            let mut var = Array1::zeros(c);
            for ch in 0..c {
                let mu = mean[ch];
                var[ch] = x.index_axis(Axis(1), ch).iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / count;
            }
            let unbiased = if m > 1 { var.mapv(|v| v * count / from_usize(m - 1)) } else { var.clone() };
            (mean.clone(), var, Some((mean, unbiased)))
        }
    };
    let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
    let mut xhat = x.clone();
    let mut y = x.clone();
    for ch in 0..c {
        let (mu, is, g, b) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
        xhat.index_axis_mut(Axis(1), ch).mapv_inplace(|v| (v - mu) * is);
        y.index_axis_mut(Axis(1), ch).mapv_inplace(|v| g * ((v - mu) * is) + b);
    }
    (y, BnCache { xhat, inv_std, batch_stats })
}

/// Training-mode batch-norm backward: `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward<T: Real>(dy: &Array4<T>, gamma: &Array1<T>, cache: &BnCache<T>) -> (Array4<T>, Array1<T>, Array1<T>) {
    let (n, c, h, w) = dy.dim();
    let count = from_usize::<T>(n * h * w);
    let mut dx = dy.clone();
    let mut dgamma = Array1::zeros(c);
    let mut dbeta = Array1::zeros(c);
    for ch in 0..c {
        let dyc = dy.index_axis(Axis(1), ch);
        let xh = cache.xhat.index_axis(Axis(1), ch);
        let sum_dy: T = dyc.sum();
        let sum_dy_xh: T = dyc.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum();
        dgamma[ch] = sum_dy_xh;
        dbeta[ch] = sum_dy;
        let k = gamma[ch] * cache.inv_std[ch] / count;
        ndarray::Zip::from(dx.index_axis_mut(Axis(1), ch))
            .and(&xh)
            .for_each(|d, &xv| *d = k * (count * *d - sum_dy - xv * sum_dy_xh));
    }
    (dx, dgamma, dbeta)
}

/// Eval-mode batch-norm backward (affine map with frozen statistics).
pub fn batchnorm_backward_frozen<T: Real>(dy: &Array4<T>, gamma: &Array1<T>, cache: &BnCache<T>) -> (Array4<T>, Array1<T>, Array1<T>) {
    let c = dy.dim().1;
    let mut dx = dy.clone();
    let mut dgamma = Array1::zeros(c);
    let mut dbeta = Array1::zeros(c);
    for ch in 0..c {
        let dyc = dy.index_axis(Axis(1), ch);
        dgamma[ch] = dyc.iter().zip(cache.xhat.index_axis(Axis(1), ch).iter()).map(|(&a, &b)| a * b).sum();
        dbeta[ch] = dyc.sum();
        let k = gamma[ch] * cache.inv_std[ch];
        dx.index_axis_mut(Axis(1), ch).mapv_inplace(|v| v * k);
    }
    (dx, dgamma, dbeta)
}

pub fn relu<T: Real>(x: &Array4<T>) -> Array4<T> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient through ReLU given the activation output.
pub fn relu_backward<T: Real>(dy: &Array4<T>, out: &Array4<T>) -> Array4<T> {
    ndarray::Zip::from(dy).and(out).map_collect(|&d, &o| if o > T::zero() { d } else { T::zero() })
}

/// Stride-1 max pooling with `(k-1)/2` padding; returns the pooled map and
/// the flat source index of every output element.
pub fn maxpool_same<T: Real>(x: &Array4<T>, k: usize) -> (Array4<T>, Vec<usize>) {
    let (n, c, h, w) = x.dim();
    let r = (k / 2) as isize;
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let mut out = Array4::zeros((n, c, h, w));
    let mut arg = vec![0usize; n * c * h * w];
    let os = out.as_slice_mut().expect("fresh array");
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..h as isize {
            for xx in 0..w as isize {
                let mut best = T::neg_infinity();
                let mut at = base;
                for dy in -r..=r {
                    let yy = y + dy;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for dx in -r..=r {
                        let xc = xx + dx;
                        if xc < 0 || xc >= w as isize {
                            continue;
                        }
                        let idx = base + yy as usize * w + xc as usize;
                        if xs[idx] > best {
                            best = xs[idx];
                            at = idx;
                        }
                    }
                }
                let o = base + y as usize * w + xx as usize;
                os[o] = best;
                arg[o] = at;
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward<T: Real>(dy: &Array4<T>, arg: &[usize]) -> Array4<T> {
    let mut dx = Array4::zeros(dy.dim());
    let dxs = dx.as_slice_mut().expect("fresh array");
    let dy = dy.as_standard_layout();
    for (o, &d) in dy.as_slice().expect("standard layout").iter().enumerate() {
        dxs[arg[o]] += d;
    }
    dx
}

/// Spatial pyramid pooling: `[x, maxpool_k1(x), maxpool_k2(x), …]` along channels.
pub fn spp_forward<T: Real>(x: &Array4<T>, kernels: &[usize]) -> (Array4<T>, Vec<Vec<usize>>) {
    let (n, c, h, w) = x.dim();
    let mut out = Array4::zeros((n, c * (kernels.len() + 1), h, w));
    out.slice_mut(ndarray::s![.., 0..c, .., ..]).assign(x);
    let mut args = Vec::with_capacity(kernels.len());
    for (g, &k) in kernels.iter().enumerate() {
        let (p, arg) = maxpool_same(x, k);
        out.slice_mut(ndarray::s![.., (g + 1) * c..(g + 2) * c, .., ..]).assign(&p);
        args.push(arg);
    }
    (out, args)
}

pub fn spp_backward<T: Real>(dy: &Array4<T>, c: usize, args: &[Vec<usize>]) -> Array4<T> {
    let mut dx = dy.slice(ndarray::s![.., 0..c, .., ..]).to_owned();
    for (g, arg) in args.iter().enumerate() {
        let part = dy.slice(ndarray::s![.., (g + 1) * c..(g + 2) * c, .., ..]).to_owned();
        dx += &maxpool_backward(&part, arg);
    }
    dx
}

#[inline]
pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}
