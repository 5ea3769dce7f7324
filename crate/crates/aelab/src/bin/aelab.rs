//! Command-line entry point: run experiments, sweeps, density fits,
//! Fréchet scoring, and reports, all writing machine-readable output.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aelab::checkpoint::load_checkpoint;
use aelab::container::load_tensor;
use aelab::data::{generate_synthetic_cifar, load_cifar10, load_image_folder, Dataset, Split};
use aelab::density::{fit_gmm, fit_mvg, log_likelihood, save_density, DensityModel};
use aelab::frechet::{frechet_from_features, FeatureExtractor, Side};
use aelab::harness::{
    evaluate, latent_report, robustness_report, run_experiment, scatter_export, sweep,
    ExperimentConfig, SweepAxis, GMM_COMPONENTS,
};
use aelab::model::{DatasetKind, Depth};
use aelab::rng::Rng;
use aelab::train::encode_dataset;
use aelab::{Error, Result, Tensor};

#[derive(Parser)]
#[command(name = "aelab", about = "Autoencoder laboratory: train, sample, and score")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Dataset root (CIFAR-10 binary files, or train/ and test/ image
    /// folders for CelebA).
    #[arg(long, global = true, default_value = "data")]
    data_dir: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one experiment end to end and record its scores.
    Train,
    /// Re-score a saved checkpoint without retraining.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// One run per value of a config axis, e.g. latent_units=16,32,64.
    Sweep {
        /// axis=v1,v2,... with axis one of latent_units, filter_base,
        /// depth (depth values like 2 or 3-3-2-1).
        #[arg(long)]
        axis: String,
    },
    /// Fit a density to saved latent codes.
    FitDensity {
        #[arg(long)]
        latents: PathBuf,
        /// std_normal, mvg, or gmm.
        #[arg(long)]
        estimator: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fréchet distance between two tensor files: images (N x 3 x H x W)
    /// are passed through the config's feature extractor, feature rows
    /// (N x d) are scored directly.
    Fid {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
    /// Latent-space moments, the Gaussianity gap, and the parameter-count
    /// robustness report for a checkpoint.
    Report {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Export seeded random latent-dimension pairs as a scatter CSV.
    Scatter {
        #[arg(long)]
        latents: PathBuf,
        #[arg(long, default_value_t = 4)]
        pairs: usize,
    },
    /// Generate a synthetic CIFAR-10-format dataset into --data-dir.
    SynthData {
        #[arg(long, default_value_t = 2048)]
        n_train: usize,
        #[arg(long, default_value_t = 512)]
        n_test: usize,
    },
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("this subcommand needs --config".into()))?;
    let text = std::fs::read_to_string(path)?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = g.seed {
        cfg.train.seed = seed;
    }
    if let Some(dir) = &g.out_dir {
        cfg.out_dir = Some(dir.clone());
    }
    Ok(cfg)
}

fn load_splits(dataset: DatasetKind, data_dir: &Path) -> Result<(Dataset, Dataset)> {
    match dataset {
        DatasetKind::Cifar10 => Ok((
            load_cifar10(data_dir, Split::Train)?,
            load_cifar10(data_dir, Split::Test)?,
        )),
        DatasetKind::Celeba => {
            let mut train = load_image_folder(data_dir.join("train"), None)?;
            let mut test = load_image_folder(data_dir.join("test"), None)?;
            train.split = Split::Train;
            test.split = Split::Test;
            Ok((train, test))
        }
    }
}

fn parse_axis(s: &str) -> Result<SweepAxis> {
    let (name, values) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("axis '{s}' is not name=v1,v2,...")))?;
    let parts: Vec<&str> = values.split(',').filter(|p| !p.is_empty()).collect();
    if parts.is_empty() {
        return Err(Error::Config(format!("axis '{s}' has no values")));
    }
    let usizes = |parts: &[&str]| -> Result<Vec<usize>> {
        parts
            .iter()
            .map(|p| {
                p.parse::<usize>()
                    .map_err(|_| Error::Config(format!("axis value '{p}' is not an integer")))
            })
            .collect()
    };
    match name {
        "latent_units" => Ok(SweepAxis::LatentUnits(usizes(&parts)?)),
        "filter_base" => Ok(SweepAxis::FilterBase(usizes(&parts)?)),
        "depth" => {
            let mut depths = Vec::with_capacity(parts.len());
            for p in parts {
                let stages: Vec<&str> = p.split('-').collect();
                let d = match stages.len() {
                    1 => Depth::from(usizes(&stages)?[0]),
                    4 => {
                        let v = usizes(&stages)?;
                        Depth([v[0], v[1], v[2], v[3]])
                    }
                    _ => {
                        return Err(Error::Config(format!(
                            "depth value '{p}' must be one stage count or four"
                        )))
                    }
                };
                depths.push(d);
            }
            Ok(SweepAxis::Depth(depths))
        }
        other => Err(Error::Config(format!(
            "unknown axis '{other}' (want latent_units, filter_base, or depth)"
        ))),
    }
}

fn out_path(g: &Global, name: &str) -> PathBuf {
    match &g.out_dir {
        Some(dir) => dir.join(name),
        None => PathBuf::from(name),
    }
}

fn ensure_out_dir(g: &Global) -> Result<()> {
    if let Some(dir) = &g.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.cmd {
        Cmd::Train => {
            let cfg = load_config(g)?;
            let (train, test) = load_splits(cfg.arch.dataset, &g.data_dir)?;
            let rec = run_experiment(&cfg, &train, &test)?;
            ensure_out_dir(g)?;
            let path = out_path(g, &format!("{}.record.json", rec.run_id));
            std::fs::write(&path, serde_json::to_string_pretty(&rec)?)?;
            println!("{}", path.display());
            if let Some(msg) = &rec.failed {
                return Err(Error::Config(format!("run '{}' failed: {msg}", rec.run_id)));
            }
            Ok(())
        }
        Cmd::Eval { checkpoint } => {
            let cfg = load_config(g)?;
            let (train, test) = load_splits(cfg.arch.dataset, &g.data_dir)?;
            let train = match cfg.train_limit {
                Some(n) => train.take(n)?,
                None => train,
            };
            let (mut model, _) = load_checkpoint(checkpoint)?;
            let scores = evaluate(&mut model, &cfg.eval, &train, &test, cfg.train.seed, None)?;
            ensure_out_dir(g)?;
            let path = out_path(g, &format!("{}.eval.json", cfg.run_id));
            std::fs::write(&path, serde_json::to_string_pretty(&scores)?)?;
            println!("{}", path.display());
            Ok(())
        }
        Cmd::Sweep { axis } => {
            let cfg = load_config(g)?;
            let axis = parse_axis(axis)?;
            let (train, test) = load_splits(cfg.arch.dataset, &g.data_dir)?;
            let (records, csv) = sweep(&cfg, &axis, &train, &test)?;
            ensure_out_dir(g)?;
            let csv_path = out_path(g, &format!("{}.sweep.csv", cfg.run_id));
            std::fs::write(&csv_path, csv)?;
            let json_path = out_path(g, &format!("{}.sweep.json", cfg.run_id));
            std::fs::write(&json_path, serde_json::to_string_pretty(&records)?)?;
            println!("{}", csv_path.display());
            if let Some(rec) = records.iter().find(|r| r.failed.is_some()) {
                return Err(Error::Config(format!(
                    "run '{}' failed: {}",
                    rec.run_id,
                    rec.failed.as_deref().unwrap_or("")
                )));
            }
            Ok(())
        }
        Cmd::FitDensity { latents, estimator, out } => {
            let latents: Tensor<f32> = load_tensor(latents)?;
            let seed = g.seed.unwrap_or(0);
            let (model, report) = match estimator.as_str() {
                "std_normal" => (
                    DensityModel::StandardNormal { dim: latents.shape()[1] },
                    serde_json::json!(null),
                ),
                "mvg" => (fit_mvg(&latents)?, serde_json::json!(null)),
                "gmm" => {
                    let (m, r) = fit_gmm(&latents, GMM_COMPONENTS, &mut Rng::new(seed))?;
                    (m, serde_json::to_value(&r)?)
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown estimator '{other}' (want std_normal, mvg, or gmm)"
                    )))
                }
            };
            let ll = log_likelihood(&model, &latents)?;
            save_density(&model, out)?;
            println!(
                "{}",
                serde_json::json!({
                    "estimator": estimator,
                    "mean_log_likelihood": ll,
                    "em": report,
                    "out": out,
                })
            );
            Ok(())
        }
        Cmd::Fid { generated, reference } => {
            let a: Tensor<f32> = load_tensor(generated)?;
            let b: Tensor<f32> = load_tensor(reference)?;
            let fid = match (a.rank(), b.rank()) {
                (2, 2) => frechet_from_features(&a.cast::<f64>(), &b.cast::<f64>())?,
                (4, 4) => {
                    let fx = match load_config(g) {
                        Ok(cfg) => cfg.eval.features.extractor(),
                        Err(_) => FeatureExtractor::Pixels,
                    };
                    let fa = fx.extract(&a, Side::Generated)?;
                    let fb = fx.extract(&b, Side::Reference)?;
                    frechet_from_features(&fa, &fb)?
                }
                (ra, rb) => {
                    return Err(Error::shape(format!(
                        "inputs must both be feature rows (rank 2) or images (rank 4), got ranks {ra} and {rb}"
                    )))
                }
            };
            println!("{}", serde_json::json!({ "fid": fid }));
            Ok(())
        }
        Cmd::Report { checkpoint } => {
            let cfg = load_config(g)?;
            let (train, _) = load_splits(cfg.arch.dataset, &g.data_dir)?;
            let train = match cfg.train_limit {
                Some(n) => train.take(n)?,
                None => train,
            };
            let (mut model, _) = load_checkpoint(checkpoint)?;
            let latents = encode_dataset(&mut model, &train)?;
            let latent = latent_report(&latents, &mut Rng::new(cfg.train.seed))?;
            let robustness = robustness_report(&mut model, train.len());
            ensure_out_dir(g)?;
            let path = out_path(g, &format!("{}.report.json", cfg.run_id));
            std::fs::write(
                &path,
                serde_json::to_string_pretty(&serde_json::json!({
                    "latent": latent,
                    "robustness": robustness,
                }))?,
            )?;
            println!("{}", path.display());
            Ok(())
        }
        Cmd::Scatter { latents, pairs } => {
            let latents: Tensor<f32> = load_tensor(latents)?;
            let csv = scatter_export(&latents, *pairs, &mut Rng::new(g.seed.unwrap_or(0)))?;
            ensure_out_dir(g)?;
            let path = out_path(g, "scatter.csv");
            std::fs::write(&path, csv)?;
            println!("{}", path.display());
            Ok(())
        }
        Cmd::SynthData { n_train, n_test } => {
            std::fs::create_dir_all(&g.data_dir)?;
            generate_synthetic_cifar(&g.data_dir, *n_train, *n_test, g.seed.unwrap_or(0))?;
            println!("{}", g.data_dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse(); // clap exits with code 2 on usage errors
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
