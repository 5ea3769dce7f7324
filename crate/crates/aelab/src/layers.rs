//! Latent-space augmentations and variational machinery: batch, layer
//! and spectral normalization, train-time Gaussian noise, the
//! reparameterisation trick and the KL divergence term.
//!
//! All differentiable pieces are recorded on the [`Tape`]; the stateful
//! structs here carry what persists across steps (running statistics,
//! the power-iteration vector).

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Whether a forward pass uses batch statistics and noise (train) or the
/// frozen evaluation behaviour.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPS: f64 = 1e-3;
pub const LN_EPS: f64 = 1e-3;

/// Running statistics for batch normalization.
#[derive(Clone, Debug)]
pub struct BatchNormState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(features: usize) -> Self {
        BatchNormState {
            running_mean: vec![T::zero(); features],
            running_var: vec![T::one(); features],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }
}

/// Persistent left singular vector estimate for spectral normalization.
/// `u` has unit norm after every update.
#[derive(Clone, Debug)]
pub struct SpectralNormState<T> {
    pub u: Vec<T>,
}

fn normalize<T: Scalar>(v: &mut [T]) -> Result<()> {
    let norm = v
        .iter()
        .fold(T::zero(), |acc, &x| acc + x * x)
        .sqrt();
    if norm <= T::from_f64(1e-30) {
        return Err(Error::Linalg(
            "spectral normalization: zero vector (undefined direction)".into(),
        ));
    }
    for x in v.iter_mut() {
        *x = *x / norm;
    }
    Ok(())
}

impl<T: Scalar> SpectralNormState<T> {
    /// Random unit initialization for a weight with `rows` input rows.
    pub fn new(rows: usize, rng: &mut Rng) -> Self {
        let mut u: Vec<T> = (0..rows).map(|_| T::from_f64(rng.normal())).collect();
        normalize(&mut u).expect("normal draw is nonzero");
        SpectralNormState { u }
    }

    /// Right vector paired with the current `u`, without advancing the
    /// iteration (for eval-mode passes).
    pub fn current_v(&self, w: &Tensor<T>) -> Result<Vec<T>> {
        let mut probe = self.clone();
        let v = probe.power_iterate(w)?;
        Ok(v)
    }

    /// One power iteration against `w` ([rows x cols]); returns the
    /// right vector `v` paired with the updated `u`.
    pub fn power_iterate(&mut self, w: &Tensor<T>) -> Result<Vec<T>> {
        let s = w.shape();
        if s.len() != 2 {
            return Err(Error::shape(format!(
                "spectral normalization expects a 2-D weight, got {s:?}"
            )));
        }
        let (rows, cols) = (s[0], s[1]);
        if self.u.len() != rows {
            return Err(Error::shape("power iteration vector length mismatch"));
        }
        // v = normalize(W^T u)
        let mut v = vec![T::zero(); cols];
        for i in 0..rows {
            let ui = self.u[i];
            for (vj, &wij) in v.iter_mut().zip(&w.data()[i * cols..(i + 1) * cols]) {
                *vj = *vj + wij * ui;
            }
        }
        normalize(&mut v)?;
        // u = normalize(W v)
        let mut u = vec![T::zero(); rows];
        for i in 0..rows {
            let mut acc = T::zero();
            for (&wij, &vj) in w.data()[i * cols..(i + 1) * cols].iter().zip(&v) {
                acc = acc + wij * vj;
            }
            u[i] = acc;
        }
        normalize(&mut u)?;
        self.u = u;
        Ok(v)
    }
}

/// Per-sample latent mean and log-variance produced by a VAE encoder.
#[derive(Clone, Copy, Debug)]
pub struct VaeHeadVars {
    pub mu: Var,
    pub log_var: Var,
}

/// Decompose a rank-2 or rank-4 tensor shape into (batch, features,
/// inner) so per-feature loops can be written once.
fn feature_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape.len() {
        2 => Ok((shape[0], shape[1], 1)),
        4 => Ok((shape[0], shape[1], shape[2] * shape[3])),
        _ => Err(Error::shape(format!(
            "normalization expects rank 2 or 4, got {shape:?}"
        ))),
    }
}

impl<T: Scalar> Tape<T> {
    /// z = mu + exp(log_var / 2) * eps with externally supplied noise.
    pub fn reparameterize(&mut self, mu: Var, log_var: Var, eps: Tensor<T>) -> Result<Var> {
        let shape = self.value(mu).shape().to_vec();
        if self.value(log_var).shape() != shape.as_slice() || eps.shape() != shape.as_slice() {
            return Err(Error::shape(format!(
                "reparameterize: mu {:?}, log_var {:?}, eps {:?}",
                shape,
                self.value(log_var).shape(),
                eps.shape()
            )));
        }
        let half = T::from_f64(0.5);
        let z = {
            let m = self.value(mu);
            let lv = self.value(log_var);
            Tensor::from_fn(&shape, |i| {
                m.data()[i] + (half * lv.data()[i]).exp() * eps.data()[i]
            })
        };
        z.check_finite("reparameterize")?;
        Ok(self.push(
            z,
            Box::new(move |vals, g, store| {
                store.accumulate(mu, g.clone());
                let lv = &vals[log_var.0];
                let glv = Tensor::from_fn(lv.shape(), |i| {
                    g.data()[i] * half * (half * lv.data()[i]).exp() * eps.data()[i]
                });
                store.accumulate(log_var, glv);
            }),
        ))
    }

    /// D_KL(N(mu, sigma^2) || N(0, I)): sum over latent dims of
    /// (mu^2 + sigma^2 - 1 - ln sigma^2) / 2, averaged over the batch.
    pub fn kl_term(&mut self, mu: Var, log_var: Var) -> Result<Var> {
        let shape = self.value(mu).shape().to_vec();
        if self.value(log_var).shape() != shape.as_slice() {
            return Err(Error::shape("kl_term: mu/log_var shape mismatch"));
        }
        if shape.len() != 2 {
            return Err(Error::shape(format!(
                "kl_term expects [batch, latent], got {shape:?}"
            )));
        }
        let batch = T::from_f64(shape[0] as f64);
        let half = T::from_f64(0.5);
        let total = {
            let m = self.value(mu);
            let lv = self.value(log_var);
            let mut acc = T::zero();
            for i in 0..m.numel() {
                let mu_i = m.data()[i];
                let lv_i = lv.data()[i];
                acc = acc + half * (mu_i * mu_i + lv_i.exp() - T::one() - lv_i);
            }
            acc / batch
        };
        let lt = Tensor::scalar_value(total);
        lt.check_finite("kl_term")?;
        Ok(self.push(
            lt,
            Box::new(move |vals, g, store| {
                let gs = g.data()[0];
                let m = &vals[mu.0];
                let lv = &vals[log_var.0];
                store.accumulate(mu, Tensor::from_fn(m.shape(), |i| gs * m.data()[i] / batch));
                store.accumulate(
                    log_var,
                    Tensor::from_fn(lv.shape(), |i| {
                        gs * half * (lv.data()[i].exp() - T::one()) / batch
                    }),
                );
            }),
        ))
    }

    /// Batch normalization over the feature axis (axis 1). Train mode
    /// standardizes by batch statistics and updates the running stats;
    /// eval mode uses the running stats only.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        delta: Var,
        state: &mut BatchNormState<T>,
        mode: Mode,
    ) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let (n, features, inner) = feature_layout(&shape)?;
        if self.value(gamma).numel() != features || self.value(delta).numel() != features {
            return Err(Error::shape(format!(
                "batch_norm: gamma/delta must have {features} entries"
            )));
        }
        if state.running_mean.len() != features {
            return Err(Error::shape("batch_norm: state feature count mismatch"));
        }
        if mode == Mode::Train && n < 2 {
            return Err(Error::Config(
                "batch_norm: train mode requires batch size >= 2".into(),
            ));
        }
        let eps = T::from_f64(state.eps);
        let idx = move |i: usize, f: usize, p: usize| (i * features + f) * inner + p;

        let (mean, inv_std) = match mode {
            Mode::Train => {
                let m_count = T::from_f64((n * inner) as f64);
                let xv = self.value(x);
                let mut mean = vec![T::zero(); features];
                let mut var = vec![T::zero(); features];
                for f in 0..features {
                    let mut s = T::zero();
                    for i in 0..n {
                        for p in 0..inner {
                            s = s + xv.data()[idx(i, f, p)];
                        }
                    }
                    let mu = s / m_count;
                    let mut sq = T::zero();
                    for i in 0..n {
                        for p in 0..inner {
                            let d = xv.data()[idx(i, f, p)] - mu;
                            sq = sq + d * d;
                        }
                    }
                    mean[f] = mu;
                    var[f] = sq / m_count;
                }
                let mom = T::from_f64(state.momentum);
                let one_minus = T::one() - mom;
                for f in 0..features {
                    state.running_mean[f] = mom * state.running_mean[f] + one_minus * mean[f];
                    state.running_var[f] = mom * state.running_var[f] + one_minus * var[f];
                }
                let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                (mean, inv_std)
            }
            Mode::Eval => {
                let inv_std: Vec<T> = state
                    .running_var
                    .iter()
                    .map(|&v| T::one() / (v + eps).sqrt())
                    .collect();
                (state.running_mean.clone(), inv_std)
            }
        };

        let out = {
            let xv = self.value(x);
            let gv = self.value(gamma);
            let dv = self.value(delta);
            let mut out = Tensor::zeros(&shape);
            for i in 0..n {
                for f in 0..features {
                    for p in 0..inner {
                        let j = idx(i, f, p);
                        let xhat = (xv.data()[j] - mean[f]) * inv_std[f];
                        out.data_mut()[j] = gv.data()[f] * xhat + dv.data()[f];
                    }
                }
            }
            out
        };
        out.check_finite("batch_norm")?;

        let is_train = mode == Mode::Train;
        Ok(self.push(
            out,
            Box::new(move |vals, g, store| {
                let xv = &vals[x.0];
                let gv = &vals[gamma.0];
                let m_count = T::from_f64((n * inner) as f64);
                let mut gx = Tensor::zeros(xv.shape());
                let mut ggamma = Tensor::zeros(&[features]);
                let mut gdelta = Tensor::zeros(&[features]);
                for f in 0..features {
                    let mut sum_dxhat = T::zero();
                    let mut sum_dxhat_xhat = T::zero();
                    let mut sum_g = T::zero();
                    let mut sum_g_xhat = T::zero();
                    for i in 0..n {
                        for p in 0..inner {
                            let j = idx(i, f, p);
                            let xhat = (xv.data()[j] - mean[f]) * inv_std[f];
                            let gj = g.data()[j];
                            let dxhat = gj * gv.data()[f];
                            sum_dxhat = sum_dxhat + dxhat;
                            sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
                            sum_g = sum_g + gj;
                            sum_g_xhat = sum_g_xhat + gj * xhat;
                        }
                    }
                    for i in 0..n {
                        for p in 0..inner {
                            let j = idx(i, f, p);
                            let xhat = (xv.data()[j] - mean[f]) * inv_std[f];
                            let dxhat = g.data()[j] * gv.data()[f];
                            gx.data_mut()[j] = if is_train {
                                inv_std[f] / m_count
                                    * (m_count * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
                            } else {
                                dxhat * inv_std[f]
                            };
                        }
                    }
                    ggamma.data_mut()[f] = sum_g_xhat;
                    gdelta.data_mut()[f] = sum_g;
                }
                store.accumulate(x, gx);
                store.accumulate(gamma, ggamma);
                store.accumulate(delta, gdelta);
            }),
        ))
    }

    /// Layer normalization: standardize across the feature axes of each
    /// sample. Identical in train and eval mode.
    pub fn layer_norm(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if shape.len() < 2 {
            return Err(Error::shape(format!(
                "layer_norm expects rank >= 2, got {shape:?}"
            )));
        }
        let n = shape[0];
        let feat: usize = shape[1..].iter().product();
        if self.value(scale).numel() != feat || self.value(shift).numel() != feat {
            return Err(Error::shape(format!(
                "layer_norm: scale/shift must have {feat} entries"
            )));
        }
        let eps = T::from_f64(LN_EPS);
        let m_count = T::from_f64(feat as f64);

        // Per-sample mean and inverse std, saved for the backward pass.
        let (means, inv_stds) = {
            let xv = self.value(x);
            let mut means = vec![T::zero(); n];
            let mut inv_stds = vec![T::zero(); n];
            for i in 0..n {
                let row = &xv.data()[i * feat..(i + 1) * feat];
                let mu = row.iter().fold(T::zero(), |a, &v| a + v) / m_count;
                let var = row
                    .iter()
                    .fold(T::zero(), |a, &v| a + (v - mu) * (v - mu))
                    / m_count;
                means[i] = mu;
                inv_stds[i] = T::one() / (var + eps).sqrt();
            }
            (means, inv_stds)
        };

        let out = {
            let xv = self.value(x);
            let sv = self.value(scale);
            let bv = self.value(shift);
            let mut out = Tensor::zeros(&shape);
            for i in 0..n {
                for f in 0..feat {
                    let j = i * feat + f;
                    let xhat = (xv.data()[j] - means[i]) * inv_stds[i];
                    out.data_mut()[j] = sv.data()[f] * xhat + bv.data()[f];
                }
            }
            out
        };
        out.check_finite("layer_norm")?;

        Ok(self.push(
            out,
            Box::new(move |vals, g, store| {
                let xv = &vals[x.0];
                let sv = &vals[scale.0];
                let mut gx = Tensor::zeros(xv.shape());
                let mut gscale = Tensor::zeros(&[feat]);
                let mut gshift = Tensor::zeros(&[feat]);
                for i in 0..n {
                    let mut sum_dxhat = T::zero();
                    let mut sum_dxhat_xhat = T::zero();
                    for f in 0..feat {
                        let j = i * feat + f;
                        let xhat = (xv.data()[j] - means[i]) * inv_stds[i];
                        let dxhat = g.data()[j] * sv.data()[f];
                        sum_dxhat = sum_dxhat + dxhat;
                        sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
                        gscale.data_mut()[f] = gscale.data_mut()[f] + g.data()[j] * xhat;
                        gshift.data_mut()[f] = gshift.data_mut()[f] + g.data()[j];
                    }
                    for f in 0..feat {
                        let j = i * feat + f;
                        let xhat = (xv.data()[j] - means[i]) * inv_stds[i];
                        let dxhat = g.data()[j] * sv.data()[f];
                        gx.data_mut()[j] = inv_stds[i] / m_count
                            * (m_count * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
                    }
                }
                store.accumulate(x, gx);
                store.accumulate(scale, gscale);
                store.accumulate(shift, gshift);
            }),
        ))
    }

    /// W / sigma_hat with sigma_hat = u^T W v from the power-iteration
    /// state. `u` and `v` are treated as constants by the gradient.
    pub fn spectral_normalize(&mut self, w: Var, u: Vec<T>, v: Vec<T>) -> Result<Var> {
        let shape = self.value(w).shape().to_vec();
        if shape.len() != 2 || shape[0] != u.len() || shape[1] != v.len() {
            return Err(Error::shape(format!(
                "spectral_normalize: weight {shape:?} vs u ({}) / v ({})",
                u.len(),
                v.len()
            )));
        }
        let (rows, cols) = (shape[0], shape[1]);
        let sigma_of = move |wd: &[T], u: &[T], v: &[T]| {
            let mut s = T::zero();
            for i in 0..rows {
                let mut acc = T::zero();
                for (wij, vj) in wd[i * cols..(i + 1) * cols].iter().zip(v) {
                    acc = acc + *wij * *vj;
                }
                s = s + u[i] * acc;
            }
            s
        };
        let sigma = sigma_of(self.value(w).data(), &u, &v);
        if sigma.abs() <= T::from_f64(1e-30) {
            return Err(Error::Linalg("spectral_normalize: estimated sigma is zero".into()));
        }
        let out = self.value(w).map(|x| x / sigma);
        out.check_finite("spectral_normalize")?;
        Ok(self.push(
            out,
            Box::new(move |vals, g, store| {
                let wd = vals[w.0].data();
                let sigma = sigma_of(wd, &u, &v);
                // d(W/sigma)/dW with sigma = u^T W v:
                //   gW = g / sigma - (sum g .* W / sigma^2) u v^T
                let mut dot = T::zero();
                for (gv, wv) in g.data().iter().zip(wd) {
                    dot = dot + *gv * *wv;
                }
                let coef = dot / (sigma * sigma);
                let gw = Tensor::from_fn(&[rows, cols], |j| {
                    let (i, k) = (j / cols, j % cols);
                    g.data()[j] / sigma - coef * u[i] * v[k]
                });
                store.accumulate(w, gw);
            }),
        ))
    }

    /// Additive Gaussian noise, active only in training mode.
    pub fn gaussian_noise(&mut self, x: Var, sigma: f64, rng: &mut Rng, mode: Mode) -> Result<Var> {
        if sigma < 0.0 {
            return Err(Error::Config("gaussian_noise: sigma must be >= 0".into()));
        }
        if mode == Mode::Eval || sigma == 0.0 {
            return Ok(x);
        }
        let shape = self.value(x).shape().to_vec();
        let s = T::from_f64(sigma);
        let noise = Tensor::from_fn(&shape, |_| T::from_f64(rng.normal()) * s);
        let out = {
            let xv = self.value(x);
            Tensor::from_fn(&shape, |i| xv.data()[i] + noise.data()[i])
        };
        Ok(self.push(
            out,
            Box::new(move |_vals, g, store| {
                store.accumulate(x, g.clone());
            }),
        ))
    }
}
