//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A `Tape` records each operation's output value together with a
//! backward closure. `backward` replays the closures in reverse,
//! accumulating gradients in a `GradStore`. Ops are pure given their
//! inputs; a tape is built per forward pass and dropped afterwards.
//!
//! The op set is exactly what the convolutional autoencoders here need;
//! this is not a general graph compiler.

use crate::error::{Error, Result};
use crate::ops::{self, Padding};
use crate::tensor::{Scalar, Tensor};

/// Handle to a tensor recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type BackFn<T> = Box<dyn Fn(&[Tensor<T>], &Tensor<T>, &mut GradStore<T>)>;

struct OpRecord<T> {
    out: usize,
    back: BackFn<T>,
}

/// Gradients keyed by tape variable.
pub struct GradStore<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> GradStore<T> {
    fn new(n: usize) -> Self {
        GradStore {
            grads: (0..n).map(|_| None).collect(),
        }
    }

    pub fn accumulate(&mut self, var: Var, g: Tensor<T>) {
        match &mut self.grads[var.0] {
            Some(existing) => {
                debug_assert_eq!(existing.shape(), g.shape());
                for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + *b;
                }
            }
            slot => *slot = Some(g),
        }
    }

    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads[var.0].as_ref()
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads[var.0].take()
    }
}

/// The recording tape.
pub struct Tape<T: Scalar> {
    vals: Vec<Tensor<T>>,
    ops: Vec<OpRecord<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            vals: Vec::new(),
            ops: Vec::new(),
        }
    }

    /// Insert a value with no producing op (input or parameter).
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.vals.push(t);
        Var(self.vals.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.vals[v.0]
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, back: BackFn<T>) -> Var {
        self.vals.push(value);
        let out = self.vals.len() - 1;
        self.ops.push(OpRecord { out, back });
        Var(out)
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every
    /// variable the loss depends on.
    pub fn backward(&self, loss: Var) -> Result<GradStore<T>> {
        if self.vals[loss.0].numel() != 1 {
            return Err(Error::shape(format!(
                "backward seed must be scalar, got shape {:?}",
                self.vals[loss.0].shape()
            )));
        }
        let mut store = GradStore::new(self.vals.len());
        store.accumulate(loss, Tensor::full(self.vals[loss.0].shape(), T::one()));
        for op in self.ops.iter().rev() {
            // An intermediate's grad is complete once its producing op
            // runs, so it can be taken out of the store.
            if let Some(g) = store.grads[op.out].take() {
                (op.back)(&self.vals, &g, &mut store);
            }
        }
        Ok(store)
    }

    // ---- elementwise and structural ops ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.vals[a.0].shape() != self.vals[b.0].shape() {
            return Err(Error::shape(format!(
                "add: {:?} vs {:?}",
                self.vals[a.0].shape(),
                self.vals[b.0].shape()
            )));
        }
        let mut out = self.vals[a.0].clone();
        for (o, &bv) in out.data_mut().iter_mut().zip(self.vals[b.0].data()) {
            *o = *o + bv;
        }
        Ok(self.push(
            out,
            Box::new(move |_vals, g, store| {
                store.accumulate(a, g.clone());
                store.accumulate(b, g.clone());
            }),
        ))
    }

    /// out = a + beta * b (loss assembly). `beta = 0` keeps `b` on the
    /// tape but contributes no gradient through it.
    pub fn add_scaled(&mut self, a: Var, b: Var, beta: T) -> Result<Var> {
        if self.vals[a.0].shape() != self.vals[b.0].shape() {
            return Err(Error::shape("add_scaled: shape mismatch"));
        }
        let mut out = self.vals[a.0].clone();
        for (o, &bv) in out.data_mut().iter_mut().zip(self.vals[b.0].data()) {
            *o = *o + beta * bv;
        }
        Ok(self.push(
            out,
            Box::new(move |_vals, g, store| {
                store.accumulate(a, g.clone());
                if beta != T::zero() {
                    store.accumulate(b, g.map(|v| v * beta));
                }
            }),
        ))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.vals[a.0].map(|v| v * c);
        self.push(
            out,
            Box::new(move |_vals, g, store| {
                store.accumulate(a, g.map(|v| v * c));
            }),
        )
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.vals[a.0].reshape(shape)?;
        let in_shape = self.vals[a.0].shape().to_vec();
        Ok(self.push(
            out,
            Box::new(move |_vals, g, store| {
                store.accumulate(a, g.reshape(in_shape.clone()).expect("reshape backward"));
            }),
        ))
    }

    /// Flatten all trailing axes into one: [N, ...] -> [N, prod(...)].
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let s = self.vals[a.0].shape();
        if s.is_empty() {
            return Err(Error::shape("flatten on scalar"));
        }
        let n = s[0];
        let rest = self.vals[a.0].numel() / n;
        self.reshape(a, vec![n, rest])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.vals[a.0]
            .data()
            .iter()
            .fold(T::zero(), |acc, &v| acc + v);
        let in_shape = self.vals[a.0].shape().to_vec();
        self.push(
            Tensor::scalar_value(total),
            Box::new(move |_vals, g, store| {
                let gv = g.data()[0];
                store.accumulate(a, Tensor::full(&in_shape, gv));
            }),
        )
    }

    // ---- activations ----

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.vals[a.0].map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(
            out,
            Box::new(move |vals, g, store| {
                let x = &vals[a.0];
                let gx = Tensor::from_fn(x.shape(), |i| {
                    if x.data()[i] > T::zero() {
                        g.data()[i]
                    } else {
                        T::zero()
                    }
                });
                store.accumulate(a, gx);
            }),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let sig = |v: T| T::one() / (T::one() + (-v).exp());
        let out = self.vals[a.0].map(sig);
        self.push(
            out,
            Box::new(move |vals, g, store| {
                let x = &vals[a.0];
                let gx = Tensor::from_fn(x.shape(), |i| {
                    let s = sig(x.data()[i]);
                    g.data()[i] * s * (T::one() - s)
                });
                store.accumulate(a, gx);
            }),
        )
    }

    // ---- layer primitives ----

    /// Affine map y = x W + b with x: [N, in], W: [in, out], b: [out].
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.vals[x.0].shape().to_vec();
        let ws = self.vals[w.0].shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::shape(format!(
                "dense: input {xs:?} incompatible with weight {ws:?}"
            )));
        }
        let (n, d_in, d_out) = (xs[0], xs[1], ws[1]);
        if self.vals[b.0].numel() != d_out {
            return Err(Error::shape(format!(
                "dense: bias length {} != output dim {d_out}",
                self.vals[b.0].numel()
            )));
        }
        let mut out = Tensor::zeros(&[n, d_out]);
        ops::matmul_acc(
            self.vals[x.0].data(),
            self.vals[w.0].data(),
            out.data_mut(),
            n,
            d_in,
            d_out,
        );
        for i in 0..n {
            for (o, &bv) in out.data_mut()[i * d_out..(i + 1) * d_out]
                .iter_mut()
                .zip(self.vals[b.0].data())
            {
                *o = *o + bv;
            }
        }
        out.check_finite("dense output")?;
        Ok(self.push(
            out,
            Box::new(move |vals, g, store| {
                // gx = g W^T
                let mut gx = Tensor::zeros(&[n, d_in]);
                ops::matmul_abt_acc(g.data(), vals[w.0].data(), gx.data_mut(), n, d_out, d_in);
                store.accumulate(x, gx);
                // gw = x^T g
                let mut gw = Tensor::zeros(&[d_in, d_out]);
                ops::matmul_atb_acc(vals[x.0].data(), g.data(), gw.data_mut(), d_in, n, d_out);
                store.accumulate(w, gw);
                // gb = column sums of g
                let mut gb = Tensor::zeros(&[d_out]);
                for i in 0..n {
                    for (bv, &gv) in gb.data_mut().iter_mut().zip(&g.data()[i * d_out..(i + 1) * d_out]) {
                        *bv = *bv + gv;
                    }
                }
                store.accumulate(b, gb);
            }),
        ))
    }

    /// 2-D convolution; kernel is [out_ch, in_ch, kh, kw].
    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, stride: usize, padding: Padding) -> Result<Var> {
        let g = ops::conv_geometry(self.vals[x.0].shape(), self.vals[k.0].shape(), stride, padding)?;
        if self.vals[b.0].numel() != g.c_out {
            return Err(Error::shape(format!(
                "conv2d: bias length {} != out channels {}",
                self.vals[b.0].numel(),
                g.c_out
            )));
        }
        let out = ops::conv_fwd(&self.vals[x.0], &self.vals[k.0], Some(&self.vals[b.0]), &g);
        out.check_finite("conv2d output")?;
        let c_out = g.c_out;
        Ok(self.push(
            out,
            Box::new(move |vals, gy, store| {
                store.accumulate(x, ops::conv_grad_input(gy, &vals[k.0], &g));
                store.accumulate(k, ops::conv_grad_kernel(&vals[x.0], gy, &g));
                store.accumulate(b, ops::conv_grad_bias(gy, c_out));
            }),
        ))
    }

    /// Transposed 2-D convolution: the adjoint of `conv2d` with the same
    /// kernel. Input has `out_ch` channels; output has `in_ch` channels
    /// and spatial size input * stride.
    pub fn conv2d_transpose(&mut self, x: Var, k: Var, b: Var, stride: usize) -> Result<Var> {
        let xs = self.vals[x.0].shape().to_vec();
        let ks = self.vals[k.0].shape().to_vec();
        if xs.len() != 4 || ks.len() != 4 {
            return Err(Error::shape(format!(
                "conv2d_transpose: input {xs:?}, kernel {ks:?}"
            )));
        }
        if xs[1] != ks[0] {
            return Err(Error::shape(format!(
                "conv2d_transpose: input channels {} != kernel out channels {}",
                xs[1], ks[0]
            )));
        }
        // Geometry of the conv this op is the adjoint of. With "same"
        // padding ceil(h*s / s) == h, so the shapes line up exactly.
        let big = [xs[0], ks[1], xs[2] * stride, xs[3] * stride];
        let g = ops::conv_geometry(&big, &ks, stride, Padding::Same)?;
        debug_assert_eq!((g.oh, g.ow), (xs[2], xs[3]));
        if self.vals[b.0].numel() != g.c_in {
            return Err(Error::shape(format!(
                "conv2d_transpose: bias length {} != out channels {}",
                self.vals[b.0].numel(),
                g.c_in
            )));
        }
        let mut out = ops::conv_grad_input(&self.vals[x.0], &self.vals[k.0], &g);
        let chw = g.h * g.w;
        for i in 0..g.n {
            for c in 0..g.c_in {
                let bv = self.vals[b.0].data()[c];
                let start = (i * g.c_in + c) * chw;
                for v in &mut out.data_mut()[start..start + chw] {
                    *v = *v + bv;
                }
            }
        }
        out.check_finite("conv2d_transpose output")?;
        let c_in = g.c_in;
        Ok(self.push(
            out,
            Box::new(move |vals, gy, store| {
                // d/dx <convT(x,k), gy> = conv(gy, k)
                store.accumulate(x, ops::conv_fwd(gy, &vals[k.0], None, &g));
                // d/dk <convT(x,k), gy> = conv_grad_kernel(gy_big, x_small)
                store.accumulate(k, ops::conv_grad_kernel(gy, &vals[x.0], &g));
                // bias: per-output-channel sums over the big side
                let s = gy.shape();
                let chw = s[2] * s[3];
                let mut gb = Tensor::zeros(&[c_in]);
                for i in 0..s[0] {
                    for c in 0..c_in {
                        let start = (i * c_in + c) * chw;
                        let mut acc = T::zero();
                        for &v in &gy.data()[start..start + chw] {
                            acc = acc + v;
                        }
                        gb.data_mut()[c] = gb.data_mut()[c] + acc;
                    }
                }
                store.accumulate(b, gb);
            }),
        ))
    }

    /// Mean binary cross-entropy. Outputs are clamped to
    /// [eps_c, 1 - eps_c] before the logs; the clamp kills the gradient
    /// outside that band.
    pub fn bce_loss(&mut self, output: Var, target: Var) -> Result<Var> {
        if self.vals[output.0].shape() != self.vals[target.0].shape() {
            return Err(Error::shape(format!(
                "bce_loss: output {:?} vs target {:?}",
                self.vals[output.0].shape(),
                self.vals[target.0].shape()
            )));
        }
        let eps = T::from_f64(BCE_CLAMP);
        let hi = T::one() - eps;
        let n = self.vals[output.0].numel();
        let inv_n = T::one() / T::from_f64(n as f64);
        let mut total = T::zero();
        for (&o, &t) in self.vals[output.0].data().iter().zip(self.vals[target.0].data()) {
            let oc = o.max(eps).min(hi);
            total = total - (t * oc.ln() + (T::one() - t) * (T::one() - oc).ln());
        }
        let loss = total * inv_n;
        let lt = Tensor::scalar_value(loss);
        lt.check_finite("bce_loss")?;
        Ok(self.push(
            lt,
            Box::new(move |vals, g, store| {
                let gs = g.data()[0];
                let o = &vals[output.0];
                let t = &vals[target.0];
                let go = Tensor::from_fn(o.shape(), |i| {
                    let ov = o.data()[i];
                    if ov < eps || ov > hi {
                        return T::zero();
                    }
                    gs * inv_n * (ov - t.data()[i]) / (ov * (T::one() - ov))
                });
                store.accumulate(output, go);
            }),
        ))
    }
}

/// Clamp applied to sigmoid outputs before the BCE logs.
pub const BCE_CLAMP: f64 = 1e-7;
