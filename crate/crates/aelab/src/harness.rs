//! Experiment orchestration: single runs and sweeps covering the full
//! protocol (train → encode → fit densities → sample → score), plus the
//! latent-space, scatter, and parameter-count reports.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::container::save_tensor;
use crate::data::{Dataset, Split};
use crate::density::{self, DensityModel};
use crate::error::{Error, Result};
use crate::frechet::{
    frechet_from_features, FeatureExtractor, Side, RANDOM_PROJECTION_DIM,
};
use crate::layers::Mode;
use crate::model::{
    build_autoencoder, ArchConfig, Autoencoder, DatasetKind, Depth, ParamCounts,
};
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::train::{encode_dataset, reconstruct, train, LossBreakdown, ReconMode, TrainConfig};

// Rng stream ids for the harness's own randomness sources.
const STREAM_INIT: u64 = 0x494E49;
const STREAM_GMM: u64 = 0x474D4D;
const STREAM_SAMPLE: u64 = 0x53414D;

pub const GMM_COMPONENTS: usize = 10;

/// A latent-space sampler: which ex-post density to fit and draw from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    StdNormal,
    Mvg,
    Gmm,
}

impl Sampler {
    pub fn name(self) -> &'static str {
        match self {
            Sampler::StdNormal => "std_normal",
            Sampler::Mvg => "mvg",
            Sampler::Gmm => "gmm",
        }
    }
}

/// Feature extractor choice in serializable form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureConfig {
    Pixels,
    RandomProjection {
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_projection_dim")]
        dim: usize,
    },
    External {
        generated: PathBuf,
        reference: PathBuf,
    },
}

fn default_projection_dim() -> usize {
    RANDOM_PROJECTION_DIM
}

impl FeatureConfig {
    pub fn extractor(&self) -> FeatureExtractor {
        match self {
            FeatureConfig::Pixels => FeatureExtractor::Pixels,
            FeatureConfig::RandomProjection { seed, dim } => {
                FeatureExtractor::RandomProjection { seed: *seed, dim: *dim }
            }
            FeatureConfig::External { generated, reference } => FeatureExtractor::External {
                generated: generated.clone(),
                reference: reference.clone(),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSplit {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_samplers")]
    pub samplers: Vec<Sampler>,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default = "default_features")]
    pub features: FeatureConfig,
    #[serde(default = "default_reference")]
    pub reference_split: ReferenceSplit,
}

fn default_samplers() -> Vec<Sampler> {
    vec![Sampler::StdNormal, Sampler::Mvg, Sampler::Gmm]
}

fn default_n_samples() -> usize {
    10_000
}

fn default_features() -> FeatureConfig {
    FeatureConfig::Pixels
}

fn default_reference() -> ReferenceSplit {
    ReferenceSplit::Test
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            samplers: default_samplers(),
            n_samples: default_n_samples(),
            features: default_features(),
            reference_split: default_reference(),
        }
    }
}

/// One experiment, end to end. Serializes to a canonical JSON schema;
/// unknown fields are rejected at every level.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run_id: String,
    pub arch: ArchConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Where to persist the checkpoint, latents, and record; `None`
    /// keeps everything in memory.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Cap on training images actually used; `None` means all loaded.
    #[serde(default)]
    pub train_limit: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.arch.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SamplerScore {
    pub sampler: Sampler,
    pub fid: f64,
}

/// Everything one run produced. Append-only once written; the wall
/// clock is the only field allowed to differ between identical runs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config: ExperimentConfig,
    pub loss_curve: Vec<LossBreakdown>,
    pub fids: Vec<SamplerScore>,
    pub train_r_fid: Option<f64>,
    pub test_r_fid: Option<f64>,
    pub param_counts: ParamCounts,
    pub seed: u64,
    pub wall_clock_secs: f64,
    /// `Some(stage error)` when the run aborted partway through.
    pub failed: Option<String>,
}

/// Decode latent rows to images, in evaluation mode, batch by batch.
pub fn decode_latents(model: &mut Autoencoder<f32>, z: &Tensor<f32>) -> Result<Tensor<f32>> {
    let s = z.shape();
    if s.len() != 2 || s[1] != model.cfg.latent_units {
        return Err(Error::shape(format!(
            "latents must be N x {}, got {s:?}",
            model.cfg.latent_units
        )));
    }
    let n = s[0];
    let (h, w, _) = model.cfg.dataset.geometry();
    let row = 3 * h * w;
    let mut out = Tensor::zeros(&[n, 3, h, w]);
    let mut rng = Rng::new(0); // eval path never consults it
    let idx: Vec<usize> = (0..n).collect();
    for batch in idx.chunks(128) {
        let zb = z.gather_rows(batch)?;
        let mut tape: Tape<f32> = Tape::new();
        let zv = tape.leaf(zb);
        let recon = model.decode(&mut tape, zv, Mode::Eval, &mut rng)?;
        let rv = tape.value(recon);
        for (i, &src) in batch.iter().enumerate() {
            out.data_mut()[src * row..(src + 1) * row]
                .copy_from_slice(&rv.data()[i * row..(i + 1) * row]);
        }
    }
    Ok(out)
}

fn fid_images(
    generated: &Tensor<f32>,
    reference: &Tensor<f32>,
    fx: &FeatureExtractor,
) -> Result<f64> {
    let fa = fx.extract(generated, Side::Generated)?;
    let fb = fx.extract(reference, Side::Reference)?;
    frechet_from_features(&fa, &fb)
}

fn fit_for_sampler(
    sampler: Sampler,
    latents: &Tensor<f32>,
    seed: u64,
) -> Result<DensityModel> {
    match sampler {
        Sampler::StdNormal => Ok(DensityModel::StandardNormal {
            dim: latents.shape()[1],
        }),
        Sampler::Mvg => density::fit_mvg(latents),
        Sampler::Gmm => {
            let mut rng = Rng::stream(seed, STREAM_GMM);
            Ok(density::fit_gmm(latents, GMM_COMPONENTS, &mut rng)?.0)
        }
    }
}

struct RunOutput {
    loss_curve: Vec<LossBreakdown>,
    fids: Vec<SamplerScore>,
    train_r_fid: f64,
    test_r_fid: f64,
    param_counts: ParamCounts,
}

/// Scores from evaluating an already-trained model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalScores {
    pub fids: Vec<SamplerScore>,
    pub train_r_fid: f64,
    pub test_r_fid: f64,
}

/// Score a trained model: reconstruction FIDs for both splits plus one
/// generative FID per requested sampler. Densities are optionally
/// persisted to `density_dir`.
pub fn evaluate(
    model: &mut Autoencoder<f32>,
    eval: &EvalConfig,
    train_data: &Dataset,
    test_data: &Dataset,
    seed: u64,
    density_dir: Option<&Path>,
) -> Result<EvalScores> {
    let fx = eval.features.extractor();
    let train_recon = reconstruct(model, train_data, ReconMode::Mean, seed)?;
    let test_recon = reconstruct(model, test_data, ReconMode::Mean, seed)?;
    let train_r_fid = fid_images(&train_recon, &train_data.images, &fx)?;
    let test_r_fid = fid_images(&test_recon, &test_data.images, &fx)?;

    let latents = encode_dataset(model, train_data)?;
    let reference = match eval.reference_split {
        ReferenceSplit::Train => &train_data.images,
        ReferenceSplit::Test => &test_data.images,
    };

    let mut fids = Vec::with_capacity(eval.samplers.len());
    for (i, &sampler) in eval.samplers.iter().enumerate() {
        let dens = fit_for_sampler(sampler, &latents, seed)?;
        let mut srng = Rng::stream(seed, STREAM_SAMPLE.wrapping_add(i as u64));
        let z = density::sample(&dens, eval.n_samples, &mut srng)?.cast::<f32>();
        let images = decode_latents(model, &z)?;
        let fid = fid_images(&images, reference, &fx)?;
        fids.push(SamplerScore { sampler, fid });
        if let Some(dir) = density_dir {
            density::save_density(&dens, dir.join(format!("density_{}.bin", sampler.name())))?;
        }
    }
    Ok(EvalScores { fids, train_r_fid, test_r_fid })
}

fn run_stages(
    cfg: &ExperimentConfig,
    train_data: &Dataset,
    test_data: &Dataset,
) -> Result<RunOutput> {
    cfg.arch.validate()?;
    if train_data.split != Split::Train || test_data.split != Split::Test {
        return Err(Error::Data("run_experiment wants a train and a test split".into()));
    }
    let train_data = match cfg.train_limit {
        Some(limit) => train_data.take(limit)?,
        None => train_data.clone(),
    };
    let seed = cfg.train.seed;
    let mut init_rng = Rng::stream(seed, STREAM_INIT);
    let mut model = build_autoencoder::<f32>(&cfg.arch, &mut init_rng)?;
    let param_counts = model.param_count();

    let loss_curve = train(&mut model, &train_data, &cfg.train)?;

    let density_dir = match &cfg.out_dir {
        Some(dir) => Some(run_dir(dir, &cfg.run_id)?),
        None => None,
    };
    let scores = evaluate(
        &mut model,
        &cfg.eval,
        &train_data,
        test_data,
        seed,
        density_dir.as_deref(),
    )?;

    if let Some(rd) = &density_dir {
        save_checkpoint(&mut model, None, rd.join("checkpoint.ckpt"))?;
        save_tensor(rd.join("latents.tnsr"), &encode_dataset(&mut model, &train_data)?)?;
        std::fs::write(rd.join("loss.csv"), loss_curve_csv(&loss_curve)?)?;
    }

    Ok(RunOutput {
        loss_curve,
        fids: scores.fids,
        train_r_fid: scores.train_r_fid,
        test_r_fid: scores.test_r_fid,
        param_counts,
    })
}

fn run_dir(base: &Path, run_id: &str) -> Result<PathBuf> {
    let dir = base.join(run_id);
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Loss curve as CSV with header `epoch,bce,kl,total,lr`.
pub fn loss_curve_csv(curve: &[LossBreakdown]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "bce", "kl", "total", "lr"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for row in curve {
        w.write_record([
            row.epoch.to_string(),
            row.bce.to_string(),
            row.kl.to_string(),
            row.total.to_string(),
            row.lr.to_string(),
        ])
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

/// Run one experiment end to end. A stage failure yields a partial
/// record with `failed` set, not an `Err`; the record (and its JSON
/// file, when an output directory is configured) is always produced.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    train_data: &Dataset,
    test_data: &Dataset,
) -> Result<RunRecord> {
    let start = Instant::now();
    let staged = run_stages(cfg, train_data, test_data);
    let mut record = RunRecord {
        run_id: cfg.run_id.clone(),
        config: cfg.clone(),
        loss_curve: Vec::new(),
        fids: Vec::new(),
        train_r_fid: None,
        test_r_fid: None,
        param_counts: ParamCounts::default(),
        seed: cfg.train.seed,
        wall_clock_secs: 0.0,
        failed: None,
    };
    match staged {
        Ok(out) => {
            record.loss_curve = out.loss_curve;
            record.fids = out.fids;
            record.train_r_fid = Some(out.train_r_fid);
            record.test_r_fid = Some(out.test_r_fid);
            record.param_counts = out.param_counts;
        }
        Err(e) => record.failed = Some(e.to_string()),
    }
    record.wall_clock_secs = start.elapsed().as_secs_f64();
    if let Some(dir) = &cfg.out_dir {
        let rd = run_dir(dir, &cfg.run_id)?;
        std::fs::write(rd.join("record.json"), serde_json::to_string_pretty(&record)?)?;
    }
    Ok(record)
}

/// One value axis of a Table-1-style sweep.
#[derive(Clone, Debug)]
pub enum SweepAxis {
    LatentUnits(Vec<usize>),
    FilterBase(Vec<usize>),
    Depth(Vec<Depth>),
}

impl SweepAxis {
    fn len(&self) -> usize {
        match self {
            SweepAxis::LatentUnits(v) => v.len(),
            SweepAxis::FilterBase(v) => v.len(),
            SweepAxis::Depth(v) => v.len(),
        }
    }

    fn apply(&self, i: usize, cfg: &mut ExperimentConfig) -> String {
        match self {
            SweepAxis::LatentUnits(v) => {
                cfg.arch.latent_units = v[i];
                format!("latent{}", v[i])
            }
            SweepAxis::FilterBase(v) => {
                cfg.arch.filter_base = v[i];
                format!("filters{}", v[i])
            }
            SweepAxis::Depth(v) => {
                cfg.arch.depth = v[i];
                let d = v[i].0;
                format!("depth{}-{}-{}-{}", d[0], d[1], d[2], d[3])
            }
        }
    }
}

pub const RESULT_CSV_HEADER: [&str; 12] = [
    "run_id",
    "dataset",
    "model_kind",
    "filter_base",
    "depth",
    "latent_units",
    "latent_norm",
    "sampler",
    "fid",
    "train_r_fid",
    "test_r_fid",
    "seed",
];

/// One CSV row per (run, sampler); a run without samplers contributes a
/// single row with an empty sampler column, a failed run a single row
/// with sampler `failed`.
pub fn results_csv(records: &[RunRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULT_CSV_HEADER)
        .map_err(|e| Error::Format(e.to_string()))?;
    for rec in records {
        let arch = &rec.config.arch;
        let d = arch.depth.0;
        let base = [
            rec.run_id.clone(),
            format!("{:?}", arch.dataset).to_lowercase(),
            format!("{:?}", arch.model_kind).to_lowercase(),
            arch.filter_base.to_string(),
            format!("{}-{}-{}-{}", d[0], d[1], d[2], d[3]),
            arch.latent_units.to_string(),
            format!("{:?}", arch.latent_norm).to_lowercase(),
        ];
        let tail = |fid: String| {
            [
                fid,
                rec.train_r_fid.map(|v| v.to_string()).unwrap_or_default(),
                rec.test_r_fid.map(|v| v.to_string()).unwrap_or_default(),
                rec.seed.to_string(),
            ]
        };
        let mut rows: Vec<[String; 5]> = Vec::new();
        if rec.failed.is_some() {
            let [a, b, c, dd] = tail(String::new());
            rows.push(["failed".into(), a, b, c, dd]);
        } else if rec.fids.is_empty() {
            let [a, b, c, dd] = tail(String::new());
            rows.push([String::new(), a, b, c, dd]);
        } else {
            for s in &rec.fids {
                let [a, b, c, dd] = tail(s.fid.to_string());
                rows.push([s.sampler.name().into(), a, b, c, dd]);
            }
        }
        for row in rows {
            let full: Vec<&str> = base.iter().map(|s| s.as_str()).chain(row.iter().map(|s| s.as_str())).collect();
            w.write_record(full).map_err(|e| Error::Format(e.to_string()))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

/// Run one experiment per axis value; per-run failures end up as
/// `failed` records and the sweep continues. Returns the records and
/// the combined results CSV.
pub fn sweep(
    base: &ExperimentConfig,
    axis: &SweepAxis,
    train_data: &Dataset,
    test_data: &Dataset,
) -> Result<(Vec<RunRecord>, String)> {
    if axis.len() == 0 {
        return Err(Error::Config("sweep axis is empty".into()));
    }
    let mut records = Vec::with_capacity(axis.len());
    for i in 0..axis.len() {
        let mut cfg = base.clone();
        let tag = axis.apply(i, &mut cfg);
        cfg.run_id = format!("{}-{tag}", base.run_id);
        records.push(run_experiment(&cfg, train_data, test_data)?);
    }
    let csv = results_csv(&records)?;
    Ok((records, csv))
}

/// Per-dimension summary statistics of a latent sample.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DimStats {
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub ex_kurtosis: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatentMoments {
    pub dims: Vec<DimStats>,
    /// Dimensions with zero sample variance; their shape statistics
    /// are reported as 0.
    pub degenerate_dims: Vec<usize>,
    /// Full d x d sample covariance, row-major.
    pub cov: Vec<f64>,
}

/// Moments only; `latent_report` adds the Gaussianity proxy.
pub fn latent_moments<TN: crate::tensor::Scalar>(latents: &Tensor<TN>) -> Result<LatentMoments> {
    let s = latents.shape();
    if s.len() != 2 {
        return Err(Error::shape(format!("latents must be N x d, got {s:?}")));
    }
    let (n, d) = (s[0], s[1]);
    if n < 100 {
        return Err(Error::Data(format!("latent_report needs N >= 100, got {n}")));
    }
    let stats = crate::frechet::compute_stats(latents)?;
    let rows: Vec<f64> = latents
        .data()
        .iter()
        .map(|&v| <TN as crate::tensor::Scalar>::to_f64(v))
        .collect();
    let mut dims = Vec::with_capacity(d);
    let mut degenerate = Vec::new();
    for j in 0..d {
        let mean = stats.mean[j];
        // Central moments (population normalization) for the shape
        // statistics; std from the unbiased covariance diagonal.
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for row in rows.chunks_exact(d) {
            let c = row[j] - mean;
            let c2 = c * c;
            m2 += c2;
            m3 += c2 * c;
            m4 += c2 * c2;
        }
        let nf = n as f64;
        m2 /= nf;
        m3 /= nf;
        m4 /= nf;
        let std = stats.cov[j * d + j].sqrt();
        let (skewness, ex_kurtosis) = if m2 > 0.0 {
            (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
        } else {
            degenerate.push(j);
            (0.0, 0.0)
        };
        dims.push(DimStats { mean, std, skewness, ex_kurtosis });
    }
    Ok(LatentMoments { dims, degenerate_dims: degenerate, cov: stats.cov })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatentReport {
    pub moments: LatentMoments,
    pub mvg_log_likelihood: f64,
    pub gmm_log_likelihood: f64,
    /// GMM minus MVG mean log-likelihood, in nats: near zero for
    /// Gaussian latents, positive when a mixture fits better.
    pub gaussianity_gap: f64,
}

/// Moments plus the GMM-vs-MVG log-likelihood gap as a Gaussianity
/// proxy. N >= 100 required.
pub fn latent_report<TN: crate::tensor::Scalar>(
    latents: &Tensor<TN>,
    rng: &mut Rng,
) -> Result<LatentReport> {
    let moments = latent_moments(latents)?;
    let mvg = density::fit_mvg(latents)?;
    let (gmm, _) = density::fit_gmm(latents, GMM_COMPONENTS, rng)?;
    let mvg_ll = density::log_likelihood(&mvg, latents)?;
    let gmm_ll = density::log_likelihood(&gmm, latents)?;
    Ok(LatentReport {
        moments,
        mvg_log_likelihood: mvg_ll,
        gmm_log_likelihood: gmm_ll,
        gaussianity_gap: gmm_ll - mvg_ll,
    })
}

/// CSV of raw coordinates for `pairs` seeded random dimension pairs:
/// header `dim_i,dim_j,x,y`, one row per (pair, point).
pub fn scatter_export<TN: crate::tensor::Scalar>(
    latents: &Tensor<TN>,
    pairs: usize,
    rng: &mut Rng,
) -> Result<String> {
    let s = latents.shape();
    if s.len() != 2 || s[1] < 2 {
        return Err(Error::shape(format!("scatter needs N x d with d >= 2, got {s:?}")));
    }
    let (n, d) = (s[0], s[1]);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dim_i", "dim_j", "x", "y"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for _ in 0..pairs {
        let i = rng.below(d);
        let mut j = rng.below(d - 1);
        if j >= i {
            j += 1;
        }
        let (i, j) = (i.min(j), i.max(j));
        for r in 0..n {
            let x = <TN as crate::tensor::Scalar>::to_f64(latents.data()[r * d + i]);
            let y = <TN as crate::tensor::Scalar>::to_f64(latents.data()[r * d + j]);
            w.write_record([i.to_string(), j.to_string(), x.to_string(), y.to_string()])
                .map_err(|e| Error::Format(e.to_string()))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

/// Where a parameter count sits relative to a smoothness-bound window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundPosition {
    Below,
    Within,
    Above,
}

fn classify(count: usize, window: (f64, f64)) -> BoundPosition {
    let c = count as f64;
    if c < window.0 {
        BoundPosition::Below
    } else if c <= window.1 {
        BoundPosition::Within
    } else {
        BoundPosition::Above
    }
}

/// Dataset size, input dimensionality, per-component parameter counts,
/// and where each count falls relative to the parameter window that
/// smooth-interpolation bounds suggest for the dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub n_train: usize,
    pub input_dim: usize,
    pub param_counts: ParamCounts,
    pub window: (f64, f64),
    pub encoder_position: BoundPosition,
    pub decoder_position: BoundPosition,
    pub total_position: BoundPosition,
}

pub fn bound_window(dataset: DatasetKind) -> (f64, f64) {
    match dataset {
        DatasetKind::Cifar10 => (1e7, 1e8),
        DatasetKind::Celeba => (1e7, 1e9),
    }
}

pub fn robustness_report(
    model: &mut Autoencoder<f32>,
    n_train: usize,
) -> RobustnessReport {
    let counts = model.param_count();
    let window = bound_window(model.cfg.dataset);
    RobustnessReport {
        n_train,
        input_dim: model.cfg.dataset.input_dim(),
        param_counts: counts,
        window,
        encoder_position: classify(counts.encoder, window),
        decoder_position: classify(counts.decoder, window),
        total_position: classify(counts.total, window),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_cifar, load_cifar10};
    use crate::model::{LatentNorm, ModelKind};

    fn tiny_arch() -> ArchConfig {
        ArchConfig {
            dataset: DatasetKind::Cifar10,
            filter_base: 4,
            depth: 1.into(),
            latent_units: 8,
            model_kind: ModelKind::Dae,
            latent_norm: LatentNorm::None,
            decoder_noise_sigma: 0.0,
            freeze_latent: false,
            beta: 0.01,
            internal_bn: false,
        }
    }

    fn tiny_cfg(run_id: &str, samplers: Vec<Sampler>) -> ExperimentConfig {
        ExperimentConfig {
            run_id: run_id.into(),
            arch: tiny_arch(),
            train: TrainConfig { epochs: 1, batch_size: 32, beta: None, seed: 11 },
            eval: EvalConfig {
                samplers,
                n_samples: 48,
                features: FeatureConfig::RandomProjection { seed: 2, dim: 12 },
                reference_split: ReferenceSplit::Test,
            },
            out_dir: None,
            train_limit: Some(64),
        }
    }

    fn tiny_splits(dir: &Path) -> (Dataset, Dataset) {
        generate_synthetic_cifar(dir, 64, 48, 1234).unwrap();
        (
            load_cifar10(dir, Split::Train).unwrap(),
            load_cifar10(dir, Split::Test).unwrap(),
        )
    }

    #[test]
    fn no_samplers_gives_reconstruction_fids_only() {
        let dir = tempfile::tempdir().unwrap();
        let (tr, te) = tiny_splits(dir.path());
        let rec = run_experiment(&tiny_cfg("r0", vec![]), &tr, &te).unwrap();
        assert!(rec.failed.is_none());
        assert!(rec.fids.is_empty());
        assert!(rec.train_r_fid.unwrap().is_finite());
        assert!(rec.test_r_fid.unwrap().is_finite());
        assert_eq!(rec.loss_curve.len(), 1);
        assert!(rec.param_counts.total > 0);
    }

    #[test]
    fn identical_runs_bit_exact_excluding_wall_clock() {
        let dir = tempfile::tempdir().unwrap();
        let (tr, te) = tiny_splits(dir.path());
        let cfg = tiny_cfg("r1", vec![Sampler::StdNormal, Sampler::Gmm]);
        let a = run_experiment(&cfg, &tr, &te).unwrap();
        let b = run_experiment(&cfg, &tr, &te).unwrap();
        let strip = |r: &RunRecord| {
            let mut v = serde_json::to_value(r).unwrap();
            v.as_object_mut().unwrap().remove("wall_clock_secs");
            v
        };
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(a.fids.len(), 2);
    }

    #[test]
    fn failed_stage_marks_record() {
        let dir = tempfile::tempdir().unwrap();
        let (tr, te) = tiny_splits(dir.path());
        let mut cfg = tiny_cfg("r2", vec![]);
        cfg.train.batch_size = 1; // rejected by train()
        let rec = run_experiment(&cfg, &tr, &te).unwrap();
        assert!(rec.failed.is_some());
        assert!(rec.fids.is_empty() && rec.train_r_fid.is_none());
    }

    #[test]
    fn run_persists_artifacts() {
        let data_dir = tempfile::tempdir().unwrap();
        let out_dir = tempfile::tempdir().unwrap();
        let (tr, te) = tiny_splits(data_dir.path());
        let mut cfg = tiny_cfg("r3", vec![Sampler::Mvg]);
        cfg.out_dir = Some(out_dir.path().to_path_buf());
        let rec = run_experiment(&cfg, &tr, &te).unwrap();
        assert!(rec.failed.is_none());
        let rd = out_dir.path().join("r3");
        for f in ["checkpoint.ckpt", "latents.tnsr", "loss.csv", "record.json", "density_mvg.bin"] {
            assert!(rd.join(f).exists(), "{f} missing");
        }
    }

    #[test]
    fn sweep_row_counts() {
        let dir = tempfile::tempdir().unwrap();
        let (tr, te) = tiny_splits(dir.path());
        let cfg = tiny_cfg("s", vec![Sampler::StdNormal, Sampler::Mvg]);
        let (records, csv) = sweep(&cfg, &SweepAxis::LatentUnits(vec![4, 8]), &tr, &te).unwrap();
        assert_eq!(records.len(), 2);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 2 * 2); // header + 2 runs x 2 samplers
        assert_eq!(lines[0], RESULT_CSV_HEADER.join(","));
        assert!(lines[1].starts_with("s-latent4,cifar10,dae,4,1-1-1-1,4,none,std_normal,"));
    }

    #[test]
    fn sweep_single_value_matches_run_experiment() {
        let dir = tempfile::tempdir().unwrap();
        let (tr, te) = tiny_splits(dir.path());
        let cfg = tiny_cfg("s1", vec![Sampler::StdNormal]);
        let (records, _) = sweep(&cfg, &SweepAxis::LatentUnits(vec![8]), &tr, &te).unwrap();
        let mut direct_cfg = cfg.clone();
        direct_cfg.run_id = "s1-latent8".into();
        let direct = run_experiment(&direct_cfg, &tr, &te).unwrap();
        assert_eq!(records[0].fids[0].fid, direct.fids[0].fid);
    }

    #[test]
    fn sweep_continues_past_failures() {
        let dir = tempfile::tempdir().unwrap();
        let (tr, te) = tiny_splits(dir.path());
        let mut cfg = tiny_cfg("sf", vec![]);
        cfg.train_limit = Some(64);
        // latent_units = 0 fails validation; the second value runs.
        let (records, csv) = sweep(&cfg, &SweepAxis::LatentUnits(vec![0, 8]), &tr, &te).unwrap();
        assert!(records[0].failed.is_some());
        assert!(records[1].failed.is_none());
        assert!(csv.lines().nth(1).unwrap().contains("failed"));
    }

    #[test]
    fn config_json_roundtrip_and_unknown_field() {
        let cfg = tiny_cfg("j", vec![Sampler::Gmm]);
        let s = cfg.to_json().unwrap();
        let back = ExperimentConfig::from_json(&s).unwrap();
        assert_eq!(serde_json::to_value(&back).unwrap(), serde_json::to_value(&cfg).unwrap());
        let mut v: serde_json::Value = serde_json::from_str(&s).unwrap();
        v.as_object_mut().unwrap().insert("surprise".into(), 1.into());
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn gaussian_latents_have_small_moments() {
        let mut rng = Rng::new(301);
        let latents: Tensor<f64> = rng.fill_normal(&[100_000, 6]);
        let m = latent_moments(&latents).unwrap();
        assert!(m.degenerate_dims.is_empty());
        for d in &m.dims {
            assert!(d.mean.abs() < 0.02, "mean {}", d.mean);
            assert!((d.std - 1.0).abs() < 0.02, "std {}", d.std);
            assert!(d.skewness.abs() < 0.05, "skew {}", d.skewness);
            assert!(d.ex_kurtosis.abs() < 0.1, "kurt {}", d.ex_kurtosis);
        }
    }

    #[test]
    fn degenerate_dimension_flagged_not_fatal() {
        let mut rng = Rng::new(303);
        let latents = Tensor::from_fn(&[200, 3], |i| if i % 3 == 1 { 7.0 } else { rng.normal() });
        let m = latent_moments(&latents).unwrap();
        assert_eq!(m.degenerate_dims, vec![1]);
        assert_eq!(m.dims[1].std, 0.0);
    }

    #[test]
    fn affine_gaussian_gap_near_zero() {
        let mut rng = Rng::new(305);
        // x = A z + b with z ~ N(0, I): still Gaussian, so MVG and GMM
        // should fit equally well.
        let latents = Tensor::from_fn(&[2000, 2], |i| {
            let _ = i;
            0.0f64
        });
        let mut data = latents.into_data();
        for r in 0..2000 {
            let (z0, z1) = (rng.normal(), rng.normal());
            data[r * 2] = 2.0 * z0 + 0.5 * z1 + 1.0;
            data[r * 2 + 1] = -0.3 * z0 + 1.5 * z1 - 2.0;
        }
        let latents = Tensor::new(vec![2000, 2], data).unwrap();
        let rep = latent_report(&latents, &mut Rng::new(1)).unwrap();
        assert!(rep.gaussianity_gap.abs() < 0.01, "gap {}", rep.gaussianity_gap);
    }

    #[test]
    fn bimodal_latents_gap_large() {
        let mut rng = Rng::new(307);
        let latents = Tensor::from_fn(&[2000, 2], |i| {
            let sign = if (i / 2) % 2 == 0 { -5.0 } else { 5.0 };
            sign + 0.5 * rng.normal()
        });
        let rep = latent_report(&latents, &mut Rng::new(2)).unwrap();
        assert!(rep.gaussianity_gap > 0.1, "gap {}", rep.gaussianity_gap);
    }

    #[test]
    fn latent_report_requires_100_points() {
        let mut rng = Rng::new(309);
        let latents: Tensor<f64> = rng.fill_normal(&[99, 2]);
        assert!(latent_moments(&latents).is_err());
    }

    #[test]
    fn scatter_dimensions_and_determinism() {
        let mut rng = Rng::new(311);
        let latents: Tensor<f64> = rng.fill_normal(&[50, 2]);
        let csv = scatter_export(&latents, 3, &mut Rng::new(9)).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 3 * 50);
        // d = 2: every pair must be (0, 1).
        for line in &lines[1..] {
            assert!(line.starts_with("0,1,"), "{line}");
        }
        let again = scatter_export(&latents, 3, &mut Rng::new(9)).unwrap();
        assert_eq!(csv, again);
        let wide: Tensor<f64> = Rng::new(313).fill_normal(&[10, 8]);
        let a = scatter_export(&wide, 4, &mut Rng::new(5)).unwrap();
        let b = scatter_export(&wide, 4, &mut Rng::new(6)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn scatter_rejects_single_dimension() {
        let latents: Tensor<f64> = Rng::new(315).fill_normal(&[10, 1]);
        assert!(scatter_export(&latents, 1, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn robustness_windows_and_classification() {
        let mut arch = tiny_arch();
        arch.filter_base = 32;
        arch.latent_units = 128;
        let mut model = build_autoencoder::<f32>(&arch, &mut Rng::new(0)).unwrap();
        let rep = robustness_report(&mut model, 50_000);
        assert_eq!(rep.window, (1e7, 1e8));
        assert_eq!(rep.input_dim, 3072);
        assert_eq!(rep.n_train, 50_000);
        // f = 32, depth 1 sits far below the 10^7 lower edge.
        assert_eq!(rep.encoder_position, BoundPosition::Below);
        assert_eq!(rep.total_position, BoundPosition::Below);
        assert_eq!(bound_window(DatasetKind::Celeba), (1e7, 1e9));
        assert_eq!(DatasetKind::Celeba.input_dim(), 12288);
    }

    #[test]
    fn loss_csv_schema() {
        let curve = vec![LossBreakdown { epoch: 0, total: 0.5, bce: 0.4, kl: 10.0, lr: 1e-4 }];
        let csv = loss_curve_csv(&curve).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "epoch,bce,kl,total,lr");
        assert_eq!(lines.next().unwrap(), "0,0.4,10,0.5,0.0001");
    }
}
