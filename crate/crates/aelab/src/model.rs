//! Model factory: builds encoder/decoder/autoencoder stacks from the
//! architecture grammar (filter base, per-stage depth, latent width,
//! dataset geometry, model kind, latent augmentations).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{BatchNormState, Mode, SpectralNormState};
use crate::ops::Padding;
use crate::optim::Parameter;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Cifar10,
    Celeba,
}

impl DatasetKind {
    /// (height, width, conv kernel size).
    pub fn geometry(self) -> (usize, usize, usize) {
        match self {
            DatasetKind::Cifar10 => (32, 32, 4),
            DatasetKind::Celeba => (64, 64, 5),
        }
    }

    pub fn input_dim(self) -> usize {
        let (h, w, _) = self.geometry();
        3 * h * w
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dae,
    Vae,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentNorm {
    None,
    Bn,
    Sn,
    Ln,
}

/// Per-stage conv block counts; a scalar `d` in config JSON means
/// `[d, d, d, d]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Depth(pub [usize; 4]);

impl<'de> Deserialize<'de> for Depth {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Scalar(usize),
            List([usize; 4]),
        }
        Ok(match Raw::deserialize(de)? {
            Raw::Scalar(d) => Depth([d; 4]),
            Raw::List(l) => Depth(l),
        })
    }
}

impl From<usize> for Depth {
    fn from(d: usize) -> Self {
        Depth([d; 4])
    }
}

fn default_beta() -> f64 {
    0.01
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub dataset: DatasetKind,
    pub filter_base: usize,
    pub depth: Depth,
    pub latent_units: usize,
    pub model_kind: ModelKind,
    #[serde(default = "LatentNorm::none")]
    pub latent_norm: LatentNorm,
    #[serde(default)]
    pub decoder_noise_sigma: f64,
    #[serde(default)]
    pub freeze_latent: bool,
    /// KL weight; ignored unless model_kind is VAE.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Conv blocks are conv -> BN -> ReLU when set (the default);
    /// independent of the post-latent `latent_norm` ablation.
    #[serde(default = "default_true")]
    pub internal_bn: bool,
}

impl LatentNorm {
    fn none() -> Self {
        LatentNorm::None
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.filter_base == 0 {
            return Err(Error::Config("filter_base must be positive".into()));
        }
        if self.latent_units == 0 {
            return Err(Error::Config("latent_units must be positive".into()));
        }
        if self.depth.0.iter().any(|&d| d == 0) {
            return Err(Error::Config("depth entries must be positive".into()));
        }
        if self.decoder_noise_sigma < 0.0 {
            return Err(Error::Config("decoder_noise_sigma must be >= 0".into()));
        }
        Ok(())
    }

    /// Channel/spatial shape of the pre-latent feature map: 8f x H/8 x W/8.
    pub fn pre_latent_shape(&self) -> (usize, usize, usize) {
        let (h, w, _) = self.dataset.geometry();
        (8 * self.filter_base, h / 8, w / 8)
    }

    pub fn flat_dim(&self) -> usize {
        let (c, h, w) = self.pre_latent_shape();
        c * h * w
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Clone, Debug)]
pub struct BnBlock<T> {
    pub gamma: Parameter<T>,
    pub delta: Parameter<T>,
    pub state: BatchNormState<T>,
}

/// One conv (or transposed-conv) block: conv -> optional BN -> activation.
#[derive(Clone, Debug)]
pub struct ConvBlock<T> {
    pub kernel: Parameter<T>,
    pub bias: Parameter<T>,
    pub stride: usize,
    pub transpose: bool,
    pub bn: Option<BnBlock<T>>,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub enum LatentHead<T> {
    Dense {
        w: Parameter<T>,
        b: Parameter<T>,
    },
    Vae {
        w_mu: Parameter<T>,
        b_mu: Parameter<T>,
        w_lv: Parameter<T>,
        b_lv: Parameter<T>,
    },
}

/// Post-latent normalization chosen by `ArchConfig::latent_norm`.
/// SN divides the latent dense weight(s) by their estimated largest
/// singular value; BN/LN transform the latent activations.
#[derive(Clone, Debug)]
pub enum LatentNormLayer<T> {
    None,
    Bn(BnBlock<T>),
    Ln {
        scale: Parameter<T>,
        shift: Parameter<T>,
    },
    Sn {
        states: Vec<SpectralNormState<T>>,
    },
}

#[derive(Clone, Debug)]
pub struct Autoencoder<T: Scalar> {
    pub cfg: ArchConfig,
    pub encoder: Vec<ConvBlock<T>>,
    pub head: LatentHead<T>,
    pub latent_norm: LatentNormLayer<T>,
    pub dec_w: Parameter<T>,
    pub dec_b: Parameter<T>,
    pub decoder: Vec<ConvBlock<T>>,
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOut {
    pub recon: Var,
    pub z: Var,
    pub mu: Option<Var>,
    pub log_var: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct EncodeOut {
    pub z: Var,
    pub mu: Option<Var>,
    pub log_var: Option<Var>,
}

fn glorot<T: Scalar>(rng: &mut Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    rng.fill_uniform(shape, -limit, limit)
}

fn conv_block<T: Scalar>(
    name: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    transpose: bool,
    with_bn: bool,
    activation: Activation,
    rng: &mut Rng,
) -> ConvBlock<T> {
    // Kernel layout is [conv_out, conv_in, k, k]; a transposed block
    // maps c_in -> c_out, so its kernel is stored as [c_in, c_out, k, k].
    let (kshape, fan_in, fan_out) = if transpose {
        ([c_in, c_out, k, k], c_in * k * k, c_out * k * k)
    } else {
        ([c_out, c_in, k, k], c_in * k * k, c_out * k * k)
    };
    ConvBlock {
        kernel: Parameter::new(format!("{name}.kernel"), glorot(rng, &kshape, fan_in, fan_out)),
        bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[c_out])),
        stride,
        transpose,
        bn: with_bn.then(|| BnBlock {
            gamma: Parameter::new(format!("{name}.bn.gamma"), Tensor::full(&[c_out], T::one())),
            delta: Parameter::new(format!("{name}.bn.delta"), Tensor::zeros(&[c_out])),
            state: BatchNormState::new(c_out),
        }),
        activation,
    }
}

pub fn build_encoder<T: Scalar>(cfg: &ArchConfig, rng: &mut Rng) -> Result<Vec<ConvBlock<T>>> {
    cfg.validate()?;
    let (_, _, k) = cfg.dataset.geometry();
    let f = cfg.filter_base;
    let mut blocks = Vec::new();
    let mut c_prev = 3;
    for (stage, &mult) in [1usize, 2, 4, 8].iter().enumerate() {
        let c_out = mult * f;
        let stage_stride = if stage == 0 { 1 } else { 2 };
        let depth = cfg.depth.0[stage];
        for rep in 0..depth {
            // The strided conv is the last block of its stage.
            let stride = if rep + 1 == depth { stage_stride } else { 1 };
            let c_in = if rep == 0 { c_prev } else { c_out };
            blocks.push(conv_block(
                &format!("enc.s{}.b{rep}", stage + 1),
                c_in,
                c_out,
                k,
                stride,
                false,
                cfg.internal_bn,
                Activation::Relu,
                rng,
            ));
        }
        c_prev = c_out;
    }
    Ok(blocks)
}

fn build_head<T: Scalar>(cfg: &ArchConfig, rng: &mut Rng) -> LatentHead<T> {
    let flat = cfg.flat_dim();
    let l = cfg.latent_units;
    let mk = |name: &str, scale: f64, rng: &mut Rng| {
        let mut w: Tensor<T> = glorot(rng, &[flat, l], flat, l);
        if scale != 1.0 {
            w = w.map(|v| v * T::from_f64(scale));
        }
        let mut wp = Parameter::new(format!("latent.{name}.w"), w);
        let mut bp = Parameter::new(format!("latent.{name}.b"), Tensor::zeros(&[l]));
        wp.trainable = !cfg.freeze_latent;
        bp.trainable = !cfg.freeze_latent;
        (wp, bp)
    };
    match cfg.model_kind {
        ModelKind::Dae => {
            let (w, b) = mk("dense", 1.0, rng);
            LatentHead::Dense { w, b }
        }
        ModelKind::Vae => {
            let (w_mu, b_mu) = mk("mu", 1.0, rng);
            // Small log-variance weights start the posterior near N(mu, I).
            let (w_lv, b_lv) = mk("logvar", 0.01, rng);
            LatentHead::Vae { w_mu, b_mu, w_lv, b_lv }
        }
    }
}

fn build_latent_norm<T: Scalar>(cfg: &ArchConfig, rng: &mut Rng) -> LatentNormLayer<T> {
    let l = cfg.latent_units;
    match cfg.latent_norm {
        LatentNorm::None => LatentNormLayer::None,
        LatentNorm::Bn => LatentNormLayer::Bn(BnBlock {
            gamma: Parameter::new("latent.norm.gamma", Tensor::full(&[l], T::one())),
            delta: Parameter::new("latent.norm.delta", Tensor::zeros(&[l])),
            state: BatchNormState::new(l),
        }),
        LatentNorm::Ln => LatentNormLayer::Ln {
            scale: Parameter::new("latent.norm.scale", Tensor::full(&[l], T::one())),
            shift: Parameter::new("latent.norm.shift", Tensor::zeros(&[l])),
        },
        LatentNorm::Sn => {
            let flat = cfg.flat_dim();
            let n_heads = match cfg.model_kind {
                ModelKind::Dae => 1,
                ModelKind::Vae => 2,
            };
            LatentNormLayer::Sn {
                states: (0..n_heads).map(|_| SpectralNormState::new(flat, rng)).collect(),
            }
        }
    }
}

pub fn build_decoder<T: Scalar>(
    cfg: &ArchConfig,
    rng: &mut Rng,
) -> Result<(Parameter<T>, Parameter<T>, Vec<ConvBlock<T>>)> {
    cfg.validate()?;
    let (_, _, k) = cfg.dataset.geometry();
    let f = cfg.filter_base;
    let flat = cfg.flat_dim();
    let l = cfg.latent_units;
    let dec_w = Parameter::new("dec.dense.w", glorot(rng, &[l, flat], l, flat));
    let dec_b = Parameter::new("dec.dense.b", Tensor::zeros(&[flat]));
    let mut blocks = Vec::new();
    // Upsampling stages mirror encoder stages 3 and 2 (4f, 2f), then a
    // single strided map to 3 channels with the output sigmoid.
    let mut c_prev = 8 * f;
    for (stage_idx, mult) in [(2usize, 4usize), (1, 2)] {
        let c_out = mult * f;
        let depth = cfg.depth.0[stage_idx];
        for rep in 0..depth {
            let stride = if rep + 1 == depth { 2 } else { 1 };
            let c_in = if rep == 0 { c_prev } else { c_out };
            blocks.push(conv_block(
                &format!("dec.s{}x.b{rep}", mult),
                c_in,
                c_out,
                k,
                stride,
                true,
                cfg.internal_bn,
                Activation::Relu,
                rng,
            ));
        }
        c_prev = c_out;
    }
    blocks.push(conv_block(
        "dec.out",
        c_prev,
        3,
        k,
        2,
        true,
        false,
        Activation::Sigmoid,
        rng,
    ));
    Ok((dec_w, dec_b, blocks))
}

pub fn build_autoencoder<T: Scalar>(cfg: &ArchConfig, rng: &mut Rng) -> Result<Autoencoder<T>> {
    let encoder = build_encoder(cfg, rng)?;
    let head = build_head(cfg, rng);
    let latent_norm = build_latent_norm(cfg, rng);
    let (dec_w, dec_b, decoder) = build_decoder(cfg, rng)?;
    Ok(Autoencoder {
        cfg: cfg.clone(),
        encoder,
        head,
        latent_norm,
        dec_w,
        dec_b,
        decoder,
    })
}

fn leaf_of<T: Scalar>(tape: &mut Tape<T>, p: &mut Parameter<T>) -> Var {
    let v = tape.leaf(p.value.clone());
    p.tape_var = Some(v);
    v
}

fn block_forward<T: Scalar>(
    block: &mut ConvBlock<T>,
    tape: &mut Tape<T>,
    x: Var,
    mode: Mode,
) -> Result<Var> {
    let k = leaf_of(tape, &mut block.kernel);
    let b = leaf_of(tape, &mut block.bias);
    let y = if block.transpose {
        tape.conv2d_transpose(x, k, b, block.stride)?
    } else {
        tape.conv2d(x, k, b, block.stride, Padding::Same)?
    };
    let y = match &mut block.bn {
        Some(bn) => {
            let g = leaf_of(tape, &mut bn.gamma);
            let d = leaf_of(tape, &mut bn.delta);
            tape.batch_norm(y, g, d, &mut bn.state, mode)?
        }
        None => y,
    };
    Ok(match block.activation {
        Activation::Relu => tape.relu(y),
        Activation::Sigmoid => tape.sigmoid(y),
    })
}

impl<T: Scalar> Autoencoder<T> {
    /// Encoder pass: conv stages, flatten, latent head, post-latent
    /// normalization. `rng` feeds the VAE reparameterization; in eval
    /// mode (or for a DAE) it is not consulted for the head.
    pub fn encode(
        &mut self,
        tape: &mut Tape<T>,
        x: Var,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<EncodeOut> {
        let mut h = x;
        for block in &mut self.encoder {
            h = block_forward(block, tape, h, mode)?;
        }
        let flat = tape.flatten(h)?;

        let sn_states: Option<&mut Vec<SpectralNormState<T>>> = match &mut self.latent_norm {
            LatentNormLayer::Sn { states } => Some(states),
            _ => None,
        };
        let sn_dense = |tape: &mut Tape<T>,
                        x: Var,
                        w: &mut Parameter<T>,
                        b: &mut Parameter<T>,
                        state: Option<&mut SpectralNormState<T>>,
                        mode: Mode|
         -> Result<Var> {
            let wv = leaf_of(tape, w);
            let wv = match state {
                Some(st) => {
                    let v = if mode == Mode::Train {
                        st.power_iterate(&w.value)?
                    } else {
                        st.current_v(&w.value)?
                    };
                    tape.spectral_normalize(wv, st.u.clone(), v)?
                }
                None => wv,
            };
            let bv = leaf_of(tape, b);
            tape.dense(x, wv, bv)
        };

        let (z, mu, log_var) = match &mut self.head {
            LatentHead::Dense { w, b } => {
                let st = sn_states.map(|s| &mut s[0]);
                let z = sn_dense(tape, flat, w, b, st, mode)?;
                (z, None, None)
            }
            LatentHead::Vae {
                w_mu,
                b_mu,
                w_lv,
                b_lv,
            } => {
                let (st_mu, st_lv) = match sn_states {
                    Some(s) => {
                        let (a, b) = s.split_at_mut(1);
                        (Some(&mut a[0]), Some(&mut b[0]))
                    }
                    None => (None, None),
                };
                let mu = sn_dense(tape, flat, w_mu, b_mu, st_mu, mode)?;
                let log_var = sn_dense(tape, flat, w_lv, b_lv, st_lv, mode)?;
                let z = match mode {
                    Mode::Train => {
                        let eps = rng.fill_normal(tape.value(mu).shape());
                        tape.reparameterize(mu, log_var, eps)?
                    }
                    // Deterministic eval encoding uses the posterior mean.
                    Mode::Eval => mu,
                };
                (z, Some(mu), Some(log_var))
            }
        };

        let z = match &mut self.latent_norm {
            LatentNormLayer::None | LatentNormLayer::Sn { .. } => z,
            LatentNormLayer::Bn(bn) => {
                let g = leaf_of(tape, &mut bn.gamma);
                let d = leaf_of(tape, &mut bn.delta);
                tape.batch_norm(z, g, d, &mut bn.state, mode)?
            }
            LatentNormLayer::Ln { scale, shift } => {
                let s = leaf_of(tape, scale);
                let b = leaf_of(tape, shift);
                tape.layer_norm(z, s, b)?
            }
        };
        Ok(EncodeOut { z, mu, log_var })
    }

    /// Decoder pass: optional latent noise, dense to the pre-latent
    /// feature map, transposed-conv stages, sigmoid output.
    pub fn decode(&mut self, tape: &mut Tape<T>, z: Var, mode: Mode, rng: &mut Rng) -> Result<Var> {
        let z = tape.gaussian_noise(z, self.cfg.decoder_noise_sigma, rng, mode)?;
        let w = leaf_of(tape, &mut self.dec_w);
        let b = leaf_of(tape, &mut self.dec_b);
        let h = tape.dense(z, w, b)?;
        let h = tape.relu(h);
        let n = tape.value(h).shape()[0];
        let (c, hh, ww) = self.cfg.pre_latent_shape();
        let mut h = tape.reshape(h, vec![n, c, hh, ww])?;
        for block in &mut self.decoder {
            h = block_forward(block, tape, h, mode)?;
        }
        Ok(h)
    }

    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        x: Var,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<ForwardOut> {
        let enc = self.encode(tape, x, mode, rng)?;
        let recon = self.decode(tape, enc.z, mode, rng)?;
        Ok(ForwardOut {
            recon,
            z: enc.z,
            mu: enc.mu,
            log_var: enc.log_var,
        })
    }

    /// Every parameter, encoder first, in a stable order.
    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        fn block_params<'a, T>(b: &'a mut ConvBlock<T>, out: &mut Vec<&'a mut Parameter<T>>) {
            out.push(&mut b.kernel);
            out.push(&mut b.bias);
            if let Some(bn) = &mut b.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.delta);
            }
        }
        let mut out = Vec::new();
        for b in &mut self.encoder {
            block_params(b, &mut out);
        }
        match &mut self.head {
            LatentHead::Dense { w, b } => {
                out.push(w);
                out.push(b);
            }
            LatentHead::Vae {
                w_mu,
                b_mu,
                w_lv,
                b_lv,
            } => {
                out.push(w_mu);
                out.push(b_mu);
                out.push(w_lv);
                out.push(b_lv);
            }
        }
        match &mut self.latent_norm {
            LatentNormLayer::Bn(bn) => {
                out.push(&mut bn.gamma);
                out.push(&mut bn.delta);
            }
            LatentNormLayer::Ln { scale, shift } => {
                out.push(scale);
                out.push(shift);
            }
            LatentNormLayer::None | LatentNormLayer::Sn { .. } => {}
        }
        out.push(&mut self.dec_w);
        out.push(&mut self.dec_b);
        for b in &mut self.decoder {
            block_params(b, &mut out);
        }
        out
    }

    /// Every batch-norm running-stats state, with a stable name.
    pub fn bn_states_mut(&mut self) -> Vec<(String, &mut BatchNormState<T>)> {
        let mut out = Vec::new();
        for b in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            if let Some(bn) = &mut b.bn {
                let prefix = b.kernel.name.trim_end_matches(".kernel").to_string();
                out.push((format!("{prefix}.bn"), &mut bn.state));
            }
        }
        if let LatentNormLayer::Bn(bn) = &mut self.latent_norm {
            out.push(("latent.norm.bn".to_string(), &mut bn.state));
        }
        out
    }

    /// Every spectral-norm power-iteration state, with a stable name.
    pub fn sn_states_mut(&mut self) -> Vec<(String, &mut SpectralNormState<T>)> {
        match &mut self.latent_norm {
            LatentNormLayer::Sn { states } => states
                .iter_mut()
                .enumerate()
                .map(|(i, s)| (format!("latent.sn.{i}"), s))
                .collect(),
            _ => Vec::new(),
        }
    }

    pub fn param_count(&mut self) -> ParamCounts {
        let mut counts = ParamCounts::default();
        for b in &self.encoder {
            counts.encoder += b.kernel.value.numel() + b.bias.value.numel();
            if let Some(bn) = &b.bn {
                counts.encoder += bn.gamma.value.numel() + bn.delta.value.numel();
            }
        }
        let latent = match &self.head {
            LatentHead::Dense { w, b } => w.value.numel() + b.value.numel(),
            LatentHead::Vae {
                w_mu,
                b_mu,
                w_lv,
                b_lv,
            } => {
                w_mu.value.numel() + b_mu.value.numel() + w_lv.value.numel() + b_lv.value.numel()
            }
        };
        let latent = latent
            + match &self.latent_norm {
                LatentNormLayer::Bn(bn) => bn.gamma.value.numel() + bn.delta.value.numel(),
                LatentNormLayer::Ln { scale, shift } => {
                    scale.value.numel() + shift.value.numel()
                }
                LatentNormLayer::None | LatentNormLayer::Sn { .. } => 0,
            };
        counts.latent = latent;
        // The latent head belongs to the encoder tally.
        counts.encoder += latent;
        counts.decoder = self.dec_w.value.numel() + self.dec_b.value.numel();
        for b in &self.decoder {
            counts.decoder += b.kernel.value.numel() + b.bias.value.numel();
            if let Some(bn) = &b.bn {
                counts.decoder += bn.gamma.value.numel() + bn.delta.value.numel();
            }
        }
        counts.total = counts.encoder + counts.decoder;
        counts
    }
}

/// Parameter tallies by component; `encoder` includes the latent head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub encoder: usize,
    pub latent: usize,
    pub decoder: usize,
    pub total: usize,
}
