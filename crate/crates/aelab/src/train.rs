//! The training loop: seeded shuffling, loss assembly (BCE, or
//! BCE + β·KL for a VAE), Adam stepping on the piecewise schedule, and
//! deterministic reconstruction/encoding passes.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::{Autoencoder, ModelKind};
use crate::optim::{adam_step, lr_at_epoch, AdamState};
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::Tensor;

fn default_epochs() -> usize {
    100
}
fn default_batch() -> usize {
    128
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// KL weight override; `None` uses the architecture's beta.
    #[serde(default)]
    pub beta: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: default_epochs(),
            batch_size: default_batch(),
            beta: None,
            seed: 0,
        }
    }
}

/// Per-epoch mean losses. `total = bce + beta * kl` within 1e-6.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub epoch: usize,
    pub total: f64,
    pub bce: f64,
    pub kl: f64,
    pub lr: f64,
}

// Rng stream ids for the independent randomness sources of a run.
const STREAM_SHUFFLE: u64 = 0x5348;
const STREAM_NOISE: u64 = 0x4E4F;

/// Train in place; returns the per-epoch loss curve.
pub fn train(
    model: &mut Autoencoder<f32>,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<LossBreakdown>> {
    if cfg.batch_size < 2 {
        return Err(Error::Config("batch_size must be >= 2".into()));
    }
    if data.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let beta = cfg.beta.unwrap_or(model.cfg.beta);
    let is_vae = model.cfg.model_kind == ModelKind::Vae;
    let mut adam: AdamState<f32> = AdamState::new();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let n = data.len();

    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(epoch)?;
        let mut order: Vec<usize> = (0..n).collect();
        Rng::stream(cfg.seed, STREAM_SHUFFLE.wrapping_add(epoch as u64)).shuffle(&mut order);
        let mut noise_rng = Rng::stream(cfg.seed, STREAM_NOISE.wrapping_add(epoch as u64));

        let (mut sum_bce, mut sum_kl, mut sum_total, mut seen) = (0.0f64, 0.0f64, 0.0f64, 0usize);
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            // Batch statistics need at least two samples; a trailing
            // singleton batch is dropped rather than special-cased.
            if batch.len() < 2 {
                continue;
            }
            let x_data = data.images.gather_rows(batch)?;
            let mut tape: Tape<f32> = Tape::new();
            let x = tape.leaf(x_data);
            let out = model
                .forward(&mut tape, x, Mode::Train, &mut noise_rng)
                .map_err(|e| {
                    Error::numeric(format!("epoch {epoch} batch {batch_idx}: {e}"))
                })?;
            let bce = tape.bce_loss(out.recon, x)?;
            let (loss, kl_val) = if is_vae {
                let kl = tape.kl_term(out.mu.unwrap(), out.log_var.unwrap())?;
                let total = tape.add_scaled(bce, kl, beta as f32)?;
                (total, tape.value(kl).scalar()? as f64)
            } else {
                (bce, 0.0)
            };
            let total_val = tape.value(loss).scalar()? as f64;
            if !total_val.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_idx}"
                )));
            }
            let mut store = tape.backward(loss)?;
            for p in model.params_mut() {
                if let Some(var) = p.tape_var.take() {
                    p.grad = store.take(var);
                }
            }
            adam_step(&mut model.params_mut(), &mut adam, lr)?;

            let bce_val = tape.value(bce).scalar()? as f64;
            sum_bce += bce_val * batch.len() as f64;
            sum_kl += kl_val * batch.len() as f64;
            sum_total += total_val * batch.len() as f64;
            seen += batch.len();
        }
        let d = seen.max(1) as f64;
        curve.push(LossBreakdown {
            epoch,
            total: sum_total / d,
            bce: sum_bce / d,
            kl: sum_kl / d,
            lr,
        });
    }
    Ok(curve)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReconMode {
    /// DAE: decode(encode(x)); VAE: decode(mu). Deterministic.
    Mean,
    /// VAE: decode(mu + sigma * eps); DAE: same as Mean.
    Sample,
}

const EVAL_BATCH: usize = 128;

/// Reconstruct every image; evaluation mode throughout.
pub fn reconstruct(
    model: &mut Autoencoder<f32>,
    data: &Dataset,
    mode: ReconMode,
    seed: u64,
) -> Result<Tensor<f32>> {
    let n = data.len();
    let shape = data.images.shape().to_vec();
    let mut out = Tensor::zeros(&shape);
    let mut rng = Rng::stream(seed, STREAM_NOISE);
    let row = shape[1..].iter().product::<usize>();
    let idx: Vec<usize> = (0..n).collect();
    for batch in idx.chunks(EVAL_BATCH) {
        let x_data = data.images.gather_rows(batch)?;
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(x_data);
        let enc = model.encode(&mut tape, x, Mode::Eval, &mut rng)?;
        let z = match (mode, enc.log_var) {
            (ReconMode::Sample, Some(lv)) => {
                // enc.z is mu in eval mode; sample explicitly.
                let zshape = tape.value(enc.z).shape().to_vec();
                let eps: Tensor<f32> = rng.fill_normal(&zshape);
                let mu = enc.mu.unwrap();
                tape.reparameterize(mu, lv, eps)?
            }
            _ => enc.z,
        };
        let recon = model.decode(&mut tape, z, Mode::Eval, &mut rng)?;
        let rv = tape.value(recon);
        for (i, &src) in batch.iter().enumerate() {
            out.data_mut()[src * row..(src + 1) * row]
                .copy_from_slice(&rv.data()[i * row..(i + 1) * row]);
        }
    }
    Ok(out)
}

/// Deterministic latent codes for every image (VAE: the posterior mean),
/// as an N x latent_units tensor with row i from image i.
pub fn encode_dataset(model: &mut Autoencoder<f32>, data: &Dataset) -> Result<Tensor<f32>> {
    let n = data.len();
    let l = model.cfg.latent_units;
    let mut out = Tensor::zeros(&[n, l]);
    let mut rng = Rng::new(0); // eval path never consults it
    let idx: Vec<usize> = (0..n).collect();
    for batch in idx.chunks(EVAL_BATCH) {
        let x_data = data.images.gather_rows(batch)?;
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(x_data);
        let enc = model.encode(&mut tape, x, Mode::Eval, &mut rng)?;
        let zv = tape.value(enc.z);
        for (i, &src) in batch.iter().enumerate() {
            out.data_mut()[src * l..(src + 1) * l].copy_from_slice(&zv.data()[i * l..(i + 1) * l]);
        }
    }
    Ok(out)
}
