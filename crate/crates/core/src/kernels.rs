//! Forward kernels and their exact reverse-mode gradients.
//!
//! Every function here is pure. The tape in [`crate::tape`] composes them.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

fn check_conv(x: Shape, w: Shape, b: Shape) -> Result<usize> {
    if w.h != w.w {
        return Err(Error::invalid(
            "conv2d",
            format!("kernel must be square, got {}x{}", w.h, w.w),
        ));
    }
    if w.h % 2 == 0 {
        return Err(Error::invalid(
            "conv2d",
            format!("kernel size must be odd for same padding, got {}", w.h),
        ));
    }
    if w.c != x.c {
        return Err(Error::shape(
            "conv2d",
            format!("input with {} channels (kernel c_in)", w.c),
            format!("input with {} channels", x.c),
        ));
    }
    if b.len() != w.n {
        return Err(Error::shape(
            "conv2d",
            format!("bias with {} entries (kernel c_out)", w.n),
            format!("bias with {} entries", b.len()),
        ));
    }
    Ok(w.h)
}

/// Unfolds one `(c, h, w)` sample into a `(c*k*k, h*w)` column matrix with zero padding.
fn im2col<T: Scalar>(src: &[T], c: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let pad = k / 2;
    let hw = h * w;
    for ci in 0..c {
        let plane = &src[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * hw;
                let dst = &mut cols[row..row + hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    let out = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let shift = kx as isize - pad as isize;
                    for (x, o) in out.iter_mut().enumerate() {
                        let sx = x as isize + shift;
                        *o = if sx < 0 || sx >= w as isize {
                            T::zero()
                        } else {
                            srow[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input sample.
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize, dst: &mut [T]) {
    let pad = k / 2;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dst[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * hw;
                let src = &cols[row..row + hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let drow = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let shift = kx as isize - pad as isize;
                    for x in 0..w {
                        let sx = x as isize + shift;
                        if sx >= 0 && sx < w as isize {
                            drow[sx as usize] += src[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

/// Same-padded, stride-1 convolution. `kernel` is `(c_out, c_in, k, k)`, `bias` holds `c_out` values.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let xs = input.shape();
    let ws = kernel.shape();
    let k = check_conv(xs, ws, bias.shape())?;
    let (co, kk, hw) = (ws.n, xs.c * k * k, xs.plane());
    let mut out = Tensor::zeros(Shape::new(xs.n, co, xs.h, xs.w));
    let mut cols = vec![T::zero(); kk * hw];
    for n in 0..xs.n {
        im2col(input.sample(n), xs.c, xs.h, xs.w, k, &mut cols);
        let dst = &mut out.data_mut()[n * co * hw..(n + 1) * co * hw];
        for (o, &b) in bias.data().iter().enumerate() {
            dst[o * hw..(o + 1) * hw].fill(b);
        }
        T::gemm(co, kk, hw, kernel.data(), (kk as isize, 1), &cols, (hw as isize, 1), T::one(), dst);
    }
    Ok(out)
}

pub struct ConvGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias_shape: Shape,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let xs = input.shape();
    let ws = kernel.shape();
    let k = check_conv(xs, ws, bias_shape)?;
    let (co, kk, hw) = (ws.n, xs.c * k * k, xs.plane());
    let expected = Shape::new(xs.n, co, xs.h, xs.w);
    if grad_out.shape() != expected {
        return Err(Error::shape("conv2d_backward", expected, grad_out.shape()));
    }
    let mut g_in = Tensor::zeros(xs);
    let mut g_k = Tensor::zeros(ws);
    let mut g_b = Tensor::zeros(bias_shape);
    let mut cols = vec![T::zero(); kk * hw];
    let mut g_cols = vec![T::zero(); kk * hw];
    let sample_len = xs.c * hw;
    for n in 0..xs.n {
        let gy = &grad_out.data()[n * co * hw..(n + 1) * co * hw];
        for (o, gb) in g_b.data_mut().iter_mut().enumerate() {
            *gb += gy[o * hw..(o + 1) * hw].iter().copied().sum::<T>();
        }
        im2col(input.sample(n), xs.c, xs.h, xs.w, k, &mut cols);
        // dK += dY * cols^T
        T::gemm(co, hw, kk, gy, (hw as isize, 1), &cols, (1, hw as isize), T::one(), g_k.data_mut());
        // dcols = K^T * dY
        T::gemm(kk, co, hw, kernel.data(), (1, kk as isize), gy, (hw as isize, 1), T::zero(), &mut g_cols);
        col2im(
            &g_cols,
            xs.c,
            xs.h,
            xs.w,
            k,
            &mut g_in.data_mut()[n * sample_len..(n + 1) * sample_len],
        );
    }
    Ok(ConvGrads {
        input: g_in,
        kernel: g_k,
        bias: g_b,
    })
}

/// 2x2 max pooling with stride 2. Also returns, per output cell, the flat input
/// index that won (first maximum in row-major scan of the window).
pub fn maxpool2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = input.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::invalid(
            "maxpool2",
            format!("spatial dims must be even, got {}x{}", s.h, s.w),
        ));
    }
    let os = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut out = Tensor::zeros(os);
    let mut arg = vec![0usize; os.len()];
    let src = input.data();
    let mut o = 0;
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for y in 0..os.h {
            for x in 0..os.w {
                let i0 = base + 2 * y * s.w + 2 * x;
                let mut best = i0;
                for i in [i0 + 1, i0 + s.w, i0 + s.w + 1] {
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                out.data_mut()[o] = src[best];
                arg[o] = best;
                o += 1;
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool2_backward<T: Scalar>(input_shape: Shape, argmax: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let mut g = Tensor::zeros(input_shape);
    for (&i, &v) in argmax.iter().zip(grad_out.data()) {
        g.data_mut()[i] += v;
    }
    g
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample_nn2<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let os = Shape::new(s.n, s.c, s.h * 2, s.w * 2);
    let mut out = Tensor::zeros(os);
    let src = input.data();
    let dst = out.data_mut();
    for nc in 0..s.n * s.c {
        for y in 0..os.h {
            let srow = &src[nc * s.plane() + (y / 2) * s.w..][..s.w];
            let drow = &mut dst[nc * os.plane() + y * os.w..][..os.w];
            for (x, d) in drow.iter_mut().enumerate() {
                *d = srow[x / 2];
            }
        }
    }
    out
}

pub fn upsample_nn2_backward<T: Scalar>(grad_out: &Tensor<T>) -> Tensor<T> {
    let os = grad_out.shape();
    let s = Shape::new(os.n, os.c, os.h / 2, os.w / 2);
    let mut g = Tensor::zeros(s);
    let src = grad_out.data();
    for nc in 0..s.n * s.c {
        for y in 0..os.h {
            for x in 0..os.w {
                g.data_mut()[nc * s.plane() + (y / 2) * s.w + x / 2] += src[nc * os.plane() + y * os.w + x];
            }
        }
    }
    g
}

/// Spatial average pooling by an integer factor (readout feature pooling).
pub fn avg_pool<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if factor == 0 || s.h % factor != 0 || s.w % factor != 0 {
        return Err(Error::invalid(
            "avg_pool",
            format!("factor {factor} does not divide {}x{}", s.h, s.w),
        ));
    }
    let os = Shape::new(s.n, s.c, s.h / factor, s.w / factor);
    let norm = T::from_usize(factor * factor).unwrap();
    Ok(Tensor::from_fn(os, |n, c, y, x| {
        let mut acc = T::zero();
        for dy in 0..factor {
            for dx in 0..factor {
                acc += input.get(n, c, y * factor + dy, x * factor + dx);
            }
        }
        acc / norm
    }))
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Scalar>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    x.zip_map(g, |v, g| if v > T::zero() { g } else { T::zero() })
        .expect("shapes recorded together")
}

/// `min(p_max, x)`.
pub fn satlu<T: Scalar>(x: &Tensor<T>, p_max: T) -> Tensor<T> {
    x.map(|v| if v < p_max { v } else { p_max })
}

pub fn satlu_backward<T: Scalar>(x: &Tensor<T>, p_max: T, g: &Tensor<T>) -> Tensor<T> {
    x.zip_map(g, |v, g| if v < p_max { g } else { T::zero() })
        .expect("shapes recorded together")
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Gradient expressed through the forward output `y = sigmoid(x)`.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    y.zip_map(g, |y, g| g * y * (T::one() - y))
        .expect("shapes recorded together")
}

pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

/// Gradient expressed through the forward output `y = tanh(x)`.
pub fn tanh_backward<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    y.zip_map(g, |y, g| g * (T::one() - y * y))
        .expect("shapes recorded together")
}

pub fn abs_backward<T: Scalar>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    x.zip_map(g, |v, g| {
        if v > T::zero() {
            g
        } else if v < T::zero() {
            -g
        } else {
            T::zero()
        }
    })
    .expect("shapes recorded together")
}

/// Channel concatenation, `a`'s channels first.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
        return Err(Error::shape(
            "concat_channels",
            format!("(n, *, h, w) = ({}, *, {}, {})", sa.n, sa.h, sa.w),
            sb,
        ));
    }
    let plane = sa.plane();
    let mut data = Vec::with_capacity(a.len() + b.len());
    for n in 0..sa.n {
        data.extend_from_slice(&a.data()[n * sa.c * plane..(n + 1) * sa.c * plane]);
        data.extend_from_slice(&b.data()[n * sb.c * plane..(n + 1) * sb.c * plane]);
    }
    Tensor::from_vec(sa.with_channels(sa.c + sb.c), data)
}

fn same_shape(op: &'static str, a: Shape, b: Shape) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, a, b));
    }
    Ok(())
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("add", a.shape(), b.shape())?;
    a.zip_map(b, |x, y| x + y)
}

pub fn subtract<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("subtract", a.shape(), b.shape())?;
    a.zip_map(b, |x, y| x - y)
}

pub fn hadamard<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("hadamard", a.shape(), b.shape())?;
    a.zip_map(b, |x, y| x * y)
}
