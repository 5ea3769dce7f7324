//! Raw compute kernels: small matrix products and im2col convolution.
//!
//! These are plain sequential loops; the inner axpy over contiguous rows
//! is what the compiler vectorizes. One training run is single-threaded
//! by contract so results are bit-reproducible.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// C[m x n] += A[m x k] * B[k x n]
pub fn matmul_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// C[m x n] += A[m x k] * B^T where B is [n x k]
pub fn matmul_abt_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc = acc + av * bv;
            }
            c[i * n + j] = c[i * n + j] + acc;
        }
    }
}

/// C[m x n] += A^T * B where A is [k x m], B is [k x n]
pub fn matmul_atb_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = arow[i];
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// Padding mode for convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output spatial size is ceil(in / stride); zero padding split
    /// evenly with the extra cell at the bottom/right.
    Same,
    /// No padding; output is (in - kernel) / stride + 1.
    Valid,
}

/// Resolved convolution geometry for one (input, kernel, stride, padding).
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub oh: usize,
    pub ow: usize,
}

pub fn conv_geometry(
    input_shape: &[usize],
    kernel_shape: &[usize],
    stride: usize,
    padding: Padding,
) -> Result<ConvGeom> {
    if input_shape.len() != 4 {
        return Err(Error::shape(format!(
            "conv input must be rank 4 (N,C,H,W), got {input_shape:?}"
        )));
    }
    if kernel_shape.len() != 4 {
        return Err(Error::shape(format!(
            "conv kernel must be rank 4 (O,C,kh,kw), got {kernel_shape:?}"
        )));
    }
    if stride == 0 {
        return Err(Error::shape("stride must be positive"));
    }
    let (n, c_in, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (c_out, kc, kh, kw) = (kernel_shape[0], kernel_shape[1], kernel_shape[2], kernel_shape[3]);
    if kc != c_in {
        return Err(Error::shape(format!(
            "kernel expects {kc} input channels, input has {c_in}"
        )));
    }
    let (oh, ow, pad_h, pad_w) = match padding {
        Padding::Same => {
            let oh = h.div_ceil(stride);
            let ow = w.div_ceil(stride);
            let pad_h = ((oh - 1) * stride + kh).saturating_sub(h) / 2;
            let pad_w = ((ow - 1) * stride + kw).saturating_sub(w) / 2;
            (oh, ow, pad_h, pad_w)
        }
        Padding::Valid => {
            if h < kh || w < kw {
                return Err(Error::shape(format!(
                    "valid padding: input {h}x{w} smaller than kernel {kh}x{kw}"
                )));
            }
            ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0)
        }
    };
    Ok(ConvGeom {
        n,
        c_in,
        h,
        w,
        c_out,
        kh,
        kw,
        stride,
        pad_h,
        pad_w,
        oh,
        ow,
    })
}

/// Lay out one image as a [c_in*kh*kw x oh*ow] patch matrix.
fn im2col<T: Scalar>(img: &[T], g: &ConvGeom, cols: &mut [T]) {
    let ohw = g.oh * g.ow;
    debug_assert_eq!(cols.len(), g.c_in * g.kh * g.kw * ohw);
    for v in cols.iter_mut() {
        *v = T::zero();
    }
    for c in 0..g.c_in {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * ohw;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad_w as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        cols[row + oy * g.ow + ox] = plane[iy * g.w + ix as usize];
                    }
                }
            }
        }
    }
}

/// Scatter-add a patch-matrix gradient back onto the image.
fn col2im_acc<T: Scalar>(cols: &[T], g: &ConvGeom, img: &mut [T]) {
    let ohw = g.oh * g.ow;
    for c in 0..g.c_in {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * ohw;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad_w as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let ix = ix as usize;
                        plane[iy * g.w + ix] = plane[iy * g.w + ix] + cols[row + oy * g.ow + ox];
                    }
                }
            }
        }
    }
}

/// y[n, c_out, oh, ow] = conv(x, k) + bias
pub fn conv_fwd<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>, bias: Option<&Tensor<T>>, g: &ConvGeom) -> Tensor<T> {
    let ohw = g.oh * g.ow;
    let ckk = g.c_in * g.kh * g.kw;
    let mut out = Tensor::zeros(&[g.n, g.c_out, g.oh, g.ow]);
    let mut cols = vec![T::zero(); ckk * ohw];
    for i in 0..g.n {
        let img = &x.data()[i * g.c_in * g.h * g.w..(i + 1) * g.c_in * g.h * g.w];
        im2col(img, g, &mut cols);
        let yimg = &mut out.data_mut()[i * g.c_out * ohw..(i + 1) * g.c_out * ohw];
        matmul_acc(kernel.data(), &cols, yimg, g.c_out, ckk, ohw);
        if let Some(b) = bias {
            for co in 0..g.c_out {
                let bv = b.data()[co];
                for v in &mut yimg[co * ohw..(co + 1) * ohw] {
                    *v = *v + bv;
                }
            }
        }
    }
    out
}

/// Gradient of conv output w.r.t. its input; also the forward map of the
/// transposed convolution.
pub fn conv_grad_input<T: Scalar>(gy: &Tensor<T>, kernel: &Tensor<T>, g: &ConvGeom) -> Tensor<T> {
    let ohw = g.oh * g.ow;
    let ckk = g.c_in * g.kh * g.kw;
    let mut gx = Tensor::zeros(&[g.n, g.c_in, g.h, g.w]);
    let mut colgrad = vec![T::zero(); ckk * ohw];
    for i in 0..g.n {
        let gyimg = &gy.data()[i * g.c_out * ohw..(i + 1) * g.c_out * ohw];
        for v in colgrad.iter_mut() {
            *v = T::zero();
        }
        // colgrad = K^T [ckk x c_out] * gy [c_out x ohw]
        matmul_atb_acc(kernel.data(), gyimg, &mut colgrad, ckk, g.c_out, ohw);
        let gximg = &mut gx.data_mut()[i * g.c_in * g.h * g.w..(i + 1) * g.c_in * g.h * g.w];
        col2im_acc(&colgrad, g, gximg);
    }
    gx
}

/// Gradient of conv output w.r.t. the kernel.
pub fn conv_grad_kernel<T: Scalar>(x: &Tensor<T>, gy: &Tensor<T>, g: &ConvGeom) -> Tensor<T> {
    let ohw = g.oh * g.ow;
    let ckk = g.c_in * g.kh * g.kw;
    let mut gk = Tensor::zeros(&[g.c_out, g.c_in, g.kh, g.kw]);
    let mut cols = vec![T::zero(); ckk * ohw];
    for i in 0..g.n {
        let img = &x.data()[i * g.c_in * g.h * g.w..(i + 1) * g.c_in * g.h * g.w];
        im2col(img, g, &mut cols);
        let gyimg = &gy.data()[i * g.c_out * ohw..(i + 1) * g.c_out * ohw];
        // gk += gy [c_out x ohw] * cols^T [ohw x ckk]
        matmul_abt_acc(gyimg, &cols, gk.data_mut(), g.c_out, ohw, ckk);
    }
    gk
}

/// Per-output-channel sums of the output gradient.
pub fn conv_grad_bias<T: Scalar>(gy: &Tensor<T>, c_out: usize) -> Tensor<T> {
    let s = gy.shape();
    let ohw = s[2] * s[3];
    let mut gb = Tensor::zeros(&[c_out]);
    for i in 0..s[0] {
        for co in 0..c_out {
            let start = (i * c_out + co) * ohw;
            let mut acc = T::zero();
            for &v in &gy.data()[start..start + ohw] {
                acc = acc + v;
            }
            gb.data_mut()[co] = gb.data_mut()[co] + acc;
        }
    }
    gb
}
