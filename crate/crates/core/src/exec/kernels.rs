//! fp32 operator kernels. Accumulation is in fp32.

use std::ops::{Add, Mul};

use crate::tensor::{Shape3, Tensor};

pub fn out_extent(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

/// Element type shared by the float and integer kernels.
pub trait Scalar: Copy + Default + Add<Output = Self> + Mul<Output = Self> {}

impl Scalar for f32 {}
impl Scalar for i64 {}

/// Accumulates one weight tap into an output plane.
#[inline]
#[allow(clippy::too_many_arguments)]
fn tap<T: Scalar>(out: &mut [T], xin: &[T], x: Shape3, oh: usize, ow: usize, kh: usize, kw: usize, stride: usize, pad: usize, wv: T) {
    for oy in 0..oh {
        let iy = (oy * stride + kh) as isize - pad as isize;
        if iy < 0 || iy >= x.h as isize {
            continue;
        }
        let row = &xin[iy as usize * x.w..(iy as usize + 1) * x.w];
        let orow = &mut out[oy * ow..(oy + 1) * ow];
        for (ox, o) in orow.iter_mut().enumerate() {
            let ix = (ox * stride + kw) as isize - pad as isize;
            if ix >= 0 && (ix as usize) < x.w {
                *o = *o + wv * row[ix as usize];
            }
        }
    }
}

/// Number of in-bounds taps of one `k`x`k` kernel over all output positions.
pub fn valid_taps(x: Shape3, k: usize, stride: usize, pad: usize) -> usize {
    let (oh, ow) = (out_extent(x.h, k, stride, pad), out_extent(x.w, k, stride, pad));
    let axis = |len: usize, out: usize, kk: usize| {
        (0..out).filter(|o| {
            let i = (o * stride + kk) as isize - pad as isize;
            i >= 0 && (i as usize) < len
        }).count()
    };
    let mut n = 0;
    for kh in 0..k {
        for kw in 0..k {
            n += axis(x.h, oh, kh) * axis(x.w, ow, kw);
        }
    }
    n
}

/// Dense convolution; weight layout `[O, I, K, K]`.
pub fn conv2d_raw<T: Scalar>(x: &[T], xs: Shape3, w: &[T], wshape: &[usize], bias: &[T], stride: usize, pad: usize) -> (Shape3, Vec<T>) {
    let (o, i, k) = (wshape[0], wshape[1], wshape[2]);
    let (oh, ow) = (out_extent(xs.h, k, stride, pad), out_extent(xs.w, k, stride, pad));
    let shape = Shape3::new(o, oh, ow);
    let mut data = vec![T::default(); shape.numel()];
    let plane = xs.plane();
    for oc in 0..o {
        let out = &mut data[oc * oh * ow..(oc + 1) * oh * ow];
        out.fill(bias[oc]);
        for ic in 0..i {
            let xin = &x[ic * plane..(ic + 1) * plane];
            for kh in 0..k {
                for kw in 0..k {
                    let wv = w[((oc * i + ic) * k + kh) * k + kw];
                    tap(out, xin, xs, oh, ow, kh, kw, stride, pad, wv);
                }
            }
        }
    }
    (shape, data)
}

/// Depthwise convolution; weight layout `[C, 1, K, K]`.
pub fn depthwise_raw<T: Scalar>(x: &[T], xs: Shape3, w: &[T], wshape: &[usize], bias: &[T], stride: usize, pad: usize) -> (Shape3, Vec<T>) {
    let (c, k) = (wshape[0], wshape[2]);
    let (oh, ow) = (out_extent(xs.h, k, stride, pad), out_extent(xs.w, k, stride, pad));
    let shape = Shape3::new(c, oh, ow);
    let mut data = vec![T::default(); shape.numel()];
    let plane = xs.plane();
    for ch in 0..c {
        let out = &mut data[ch * oh * ow..(ch + 1) * oh * ow];
        out.fill(bias[ch]);
        let xin = &x[ch * plane..(ch + 1) * plane];
        for kh in 0..k {
            for kw in 0..k {
                tap(out, xin, xs, oh, ow, kh, kw, stride, pad, w[(ch * k + kh) * k + kw]);
            }
        }
    }
    (shape, data)
}

/// 1x1 convolution; weight layout `[O, I, 1, 1]`.
pub fn pointwise_raw<T: Scalar>(x: &[T], xs: Shape3, w: &[T], wshape: &[usize], bias: &[T]) -> (Shape3, Vec<T>) {
    let (o, i) = (wshape[0], wshape[1]);
    let plane = xs.plane();
    let mut data = vec![T::default(); o * plane];
    for oc in 0..o {
        let out = &mut data[oc * plane..(oc + 1) * plane];
        out.fill(bias[oc]);
        for ic in 0..i {
            let wv = w[oc * i + ic];
            for (o, &xv) in out.iter_mut().zip(&x[ic * plane..(ic + 1) * plane]) {
                *o = *o + wv * xv;
            }
        }
    }
    (Shape3::new(o, xs.h, xs.w), data)
}

/// Dense layer over the flattened input; weight layout `[O, I]`.
pub fn fully_connected_raw<T: Scalar>(x: &[T], w: &[T], wshape: &[usize], bias: &[T]) -> (Shape3, Vec<T>) {
    let (o, i) = (wshape[0], wshape[1]);
    let data = (0..o)
        .map(|oc| {
            let row = &w[oc * i..(oc + 1) * i];
            row.iter().zip(x).fold(bias[oc], |acc, (&wv, &xv)| acc + wv * xv)
        })
        .collect();
    (Shape3::new(o, 1, 1), data)
}

fn wrap((shape, data): (Shape3, Vec<f32>)) -> Tensor {
    Tensor::new(shape, data)
}

pub fn conv2d(x: &Tensor, w: &[f32], wshape: &[usize], bias: &[f32], stride: usize, pad: usize) -> Tensor {
    wrap(conv2d_raw(&x.data, x.shape, w, wshape, bias, stride, pad))
}

pub fn depthwise(x: &Tensor, w: &[f32], wshape: &[usize], bias: &[f32], stride: usize, pad: usize) -> Tensor {
    wrap(depthwise_raw(&x.data, x.shape, w, wshape, bias, stride, pad))
}

pub fn pointwise(x: &Tensor, w: &[f32], wshape: &[usize], bias: &[f32]) -> Tensor {
    wrap(pointwise_raw(&x.data, x.shape, w, wshape, bias))
}

pub fn fully_connected(x: &Tensor, w: &[f32], wshape: &[usize], bias: &[f32]) -> Tensor {
    wrap(fully_connected_raw(&x.data, w, wshape, bias))
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::new(x.shape, x.data.iter().map(|v| v.max(0.0)).collect())
}

fn pool_geometry(x: Shape3, kernel: usize, stride: usize) -> (usize, usize, usize, usize) {
    if kernel == 0 {
        (x.h, x.w, 1, 1)
    } else {
        (kernel, kernel, (x.h - kernel) / stride + 1, (x.w - kernel) / stride + 1)
    }
}

/// Generic window reduction shared by the float and integer pools.
pub fn pool_windows<T: Copy, A, U>(
    x: &[T],
    shape: Shape3,
    kernel: usize,
    stride: usize,
    init: impl Fn() -> A,
    mut fold: impl FnMut(A, T) -> A,
    mut finish: impl FnMut(A) -> U,
) -> (Shape3, Vec<U>) {
    let (kh, kw, oh, ow) = pool_geometry(shape, kernel, stride);
    let stride = if kernel == 0 { 1 } else { stride };
    let out_shape = Shape3::new(shape.c, oh, ow);
    let mut out = Vec::with_capacity(out_shape.numel());
    for c in 0..shape.c {
        let plane = &x[c * shape.plane()..(c + 1) * shape.plane()];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = init();
                for dy in 0..kh {
                    let row = (oy * stride + dy) * shape.w;
                    for dx in 0..kw {
                        acc = fold(acc, plane[row + ox * stride + dx]);
                    }
                }
                out.push(finish(acc));
            }
        }
    }
    (out_shape, out)
}

/// Number of elements in one pooling window.
pub fn pool_window_len(x: Shape3, kernel: usize) -> usize {
    if kernel == 0 {
        x.plane()
    } else {
        kernel * kernel
    }
}

pub fn maxpool(x: &Tensor, kernel: usize, stride: usize) -> Tensor {
    let (shape, data) = pool_windows(&x.data, x.shape, kernel, stride, || f32::NEG_INFINITY, f32::max, |a| a);
    Tensor::new(shape, data)
}

pub fn avgpool(x: &Tensor, kernel: usize, stride: usize) -> Tensor {
    let n = pool_window_len(x.shape, kernel) as f32;
    let (shape, data) = pool_windows(&x.data, x.shape, kernel, stride, || 0.0f32, |a, v| a + v, |a| a / n);
    Tensor::new(shape, data)
}

pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::new(a.shape, a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect())
}

pub fn concat(xs: &[&Tensor]) -> Tensor {
    let c = xs.iter().map(|t| t.shape.c).sum();
    let s = xs[0].shape;
    let data = xs.iter().flat_map(|t| t.data.iter().copied()).collect();
    Tensor::new(Shape3::new(c, s.h, s.w), data)
}

pub fn softmax(x: &Tensor) -> Tensor {
    let m = x.data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let e: Vec<f32> = x.data.iter().map(|v| (v - m).exp()).collect();
    let s: f32 = e.iter().sum();
    Tensor::new(x.shape, e.into_iter().map(|v| v / s).collect())
}
