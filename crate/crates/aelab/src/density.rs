//! Ex-post density estimation over encoded latents and generative
//! sampling: standard normal, full-covariance multivariate Gaussian,
//! and a K-component GMM fit by expectation-maximization.
//!
//! All fitting and likelihood arithmetic is in `f64`; latents arriving
//! as `f32` are widened first.

use std::path::Path;

use crate::container::Archive;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

const LN_2PI: f64 = 1.8378770664093453; // ln(2*pi)

/// One full-covariance Gaussian with a cached Cholesky factor.
#[derive(Clone, Debug)]
pub struct Gaussian {
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
    pub chol: Vec<f64>,
    pub dim: usize,
}

impl Gaussian {
    fn from_moments(mean: Vec<f64>, cov: Vec<f64>, dim: usize) -> Result<Self> {
        let chol = linalg::cholesky(&cov, dim)?;
        Ok(Gaussian { mean, cov, chol, dim })
    }

    /// log N(x | mean, cov) via the Cholesky factor.
    fn log_pdf(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let diff: Vec<f64> = (0..d).map(|i| x[i] - self.mean[i]).collect();
        let y = linalg::forward_substitute(&self.chol, &diff, d);
        let quad: f64 = y.iter().map(|v| v * v).sum();
        let log_det_half: f64 = (0..d).map(|i| self.chol[i * d + i].ln()).sum();
        -0.5 * (d as f64) * LN_2PI - log_det_half - 0.5 * quad
    }

    fn sample_into(&self, rng: &mut Rng, out: &mut [f64]) {
        let d = self.dim;
        let eps: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        for i in 0..d {
            let mut acc = self.mean[i];
            for k in 0..=i {
                acc += self.chol[i * d + k] * eps[k];
            }
            out[i] = acc;
        }
    }
}

#[derive(Clone, Debug)]
pub enum DensityModel {
    StandardNormal { dim: usize },
    FullCovGaussian(Gaussian),
    GaussianMixture { weights: Vec<f64>, comps: Vec<Gaussian> },
}

impl DensityModel {
    pub fn dim(&self) -> usize {
        match self {
            DensityModel::StandardNormal { dim } => *dim,
            DensityModel::FullCovGaussian(g) => g.dim,
            DensityModel::GaussianMixture { comps, .. } => comps[0].dim,
        }
    }
}

/// Convergence record of one EM fit.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct EmReport {
    pub iterations: usize,
    /// Mean log-likelihood after each E-step; non-decreasing.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
}

fn to_rows<T: Scalar>(latents: &Tensor<T>) -> Result<(Vec<f64>, usize, usize)> {
    let s = latents.shape();
    if s.len() != 2 {
        return Err(Error::shape(format!("latents must be N x d, got {s:?}")));
    }
    let (n, d) = (s[0], s[1]);
    Ok((
        latents
            .data()
            .iter()
            .map(|&v| <T as Scalar>::to_f64(v))
            .collect(),
        n,
        d,
    ))
}

/// Diagonal regularizer: 1e-6 times the mean diagonal entry, with a
/// floor of 1e-6 when the diagonal is degenerate.
fn lambda_of(cov: &[f64], d: usize) -> f64 {
    let mean_diag: f64 = (0..d).map(|i| cov[i * d + i]).sum::<f64>() / d as f64;
    if mean_diag > 0.0 {
        1e-6 * mean_diag
    } else {
        1e-6
    }
}

fn regularize(cov: &mut [f64], d: usize) {
    let lambda = lambda_of(cov, d);
    for i in 0..d {
        cov[i * d + i] += lambda;
    }
}

/// Empirical mean and unbiased (N-1) covariance of weighted rows.
/// `resp` is the per-row weight; `denom` the covariance denominator.
fn weighted_moments(
    rows: &[f64],
    n: usize,
    d: usize,
    resp: impl Fn(usize) -> f64,
    total: f64,
    denom: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; d];
    for i in 0..n {
        let r = resp(i);
        for (m, &x) in mean.iter_mut().zip(&rows[i * d..(i + 1) * d]) {
            *m += r * x;
        }
    }
    for m in &mut mean {
        *m /= total;
    }
    let mut cov = vec![0.0; d * d];
    let mut diff = vec![0.0; d];
    for i in 0..n {
        let r = resp(i);
        for (j, (dst, &x)) in diff.iter_mut().zip(&rows[i * d..(i + 1) * d]).enumerate() {
            *dst = x - mean[j];
        }
        for a in 0..d {
            let ra = r * diff[a];
            for b in a..d {
                cov[a * d + b] += ra * diff[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / denom;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    (mean, cov)
}

/// Fit a full-covariance Gaussian: empirical mean, unbiased covariance
/// plus diagonal regularization.
pub fn fit_mvg<T: Scalar>(latents: &Tensor<T>) -> Result<DensityModel> {
    let (rows, n, d) = to_rows(latents)?;
    if n < 2 {
        return Err(Error::Density(format!("fit_mvg needs N >= 2, got {n}")));
    }
    let (mean, mut cov) = weighted_moments(&rows, n, d, |_| 1.0, n as f64, (n - 1) as f64);
    regularize(&mut cov, d);
    Ok(DensityModel::FullCovGaussian(Gaussian::from_moments(
        mean, cov, d,
    )?))
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Squared Euclidean distance between a row and a center.
fn dist2(rows: &[f64], i: usize, center: &[f64], d: usize) -> f64 {
    rows[i * d..(i + 1) * d]
        .iter()
        .zip(center)
        .map(|(&x, &c)| (x - c) * (x - c))
        .sum()
}

/// k-means++ seeding: first center uniform, later centers sampled
/// proportional to squared distance from the nearest chosen center.
fn kmeanspp_init(rows: &[f64], n: usize, d: usize, k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(rows[rng.below(n) * d..][..d].to_vec());
    let mut d2: Vec<f64> = (0..n).map(|i| dist2(rows, i, &centers[0], d)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total <= 0.0 {
            rng.below(n)
        } else {
            let mut target = rng.uniform() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        let c = rows[idx * d..][..d].to_vec();
        for i in 0..n {
            d2[i] = d2[i].min(dist2(rows, i, &c, d));
        }
        centers.push(c);
    }
    centers
}

pub const GMM_MAX_ITERS: usize = 200;
pub const GMM_REL_TOL: f64 = 1e-5;
const GMM_COLLAPSE_WEIGHT: f64 = 1e-8;

struct EmState {
    weights: Vec<f64>,
    comps: Vec<Gaussian>,
}

/// Fit a K-component full-covariance GMM by EM.
///
/// The recorded log-likelihood sequence is non-decreasing: if a
/// regularization-induced dip below the previous iterate ever occurs,
/// the fit stops at the previous (better) parameters rather than
/// recording the decrease.
pub fn fit_gmm<T: Scalar>(
    latents: &Tensor<T>,
    k: usize,
    rng: &mut Rng,
) -> Result<(DensityModel, EmReport)> {
    let (rows, n, d) = to_rows(latents)?;
    if k == 0 {
        return Err(Error::Density("fit_gmm needs K >= 1".into()));
    }
    if n < k {
        return Err(Error::Density(format!("fit_gmm needs N >= K ({n} < {k})")));
    }

    // Shared initial covariance: the global (regularized) covariance.
    let (_, mut global_cov) = weighted_moments(&rows, n, d, |_| 1.0, n as f64, (n - 1).max(1) as f64);
    regularize(&mut global_cov, d);

    let centers = kmeanspp_init(&rows, n, d, k, rng);
    let mut state = EmState {
        weights: vec![1.0 / k as f64; k],
        comps: centers
            .into_iter()
            .map(|c| Gaussian::from_moments(c, global_cov.clone(), d))
            .collect::<Result<Vec<_>>>()?,
    };

    let mut lls: Vec<f64> = Vec::new();
    let mut resp = vec![0.0; n * k];
    let mut log_terms = vec![0.0; k];
    let mut reseeded = false;
    let mut converged = false;
    let mut best: Option<EmState> = None;

    for _iter in 0..GMM_MAX_ITERS {
        // E-step with the running mean log-likelihood.
        let mut ll_sum = 0.0;
        for i in 0..n {
            let x = &rows[i * d..(i + 1) * d];
            for (j, (g, &w)) in state.comps.iter().zip(&state.weights).enumerate() {
                log_terms[j] = w.max(f64::MIN_POSITIVE).ln() + g.log_pdf(x);
            }
            let lse = logsumexp(&log_terms);
            ll_sum += lse;
            for j in 0..k {
                resp[i * k + j] = (log_terms[j] - lse).exp();
            }
        }
        let ll = ll_sum / n as f64;
        if !ll.is_finite() {
            return Err(Error::numeric("non-finite GMM log-likelihood"));
        }
        if let Some(&last) = lls.last() {
            if ll < last {
                // Tiny decreases can follow the covariance regularizer;
                // keep the previous, better iterate.
                converged = true;
                break;
            }
            if (ll - last).abs() < GMM_REL_TOL * last.abs().max(1.0) {
                lls.push(ll);
                best = None; // current state matches the last recorded LL
                converged = true;
                break;
            }
        }
        lls.push(ll);

        // M-step.
        let mut next_weights = vec![0.0; k];
        let mut next_comps: Vec<Gaussian> = Vec::with_capacity(k);
        let mut collapse: Option<usize> = None;
        for j in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i * k + j]).sum();
            if nk / n as f64 <= GMM_COLLAPSE_WEIGHT {
                collapse = Some(j);
                break;
            }
            // Denominator nk - 1 aligns the K=1 case with fit_mvg's
            // unbiased covariance.
            let denom = (nk - 1.0).max(1e-12);
            let (mean, mut cov) =
                weighted_moments(&rows, n, d, |i| resp[i * k + j], nk, denom);
            regularize(&mut cov, d);
            next_weights[j] = nk / n as f64;
            next_comps.push(Gaussian::from_moments(mean, cov, d)?);
        }
        match collapse {
            Some(j) => {
                if reseeded {
                    return Err(Error::Density(format!(
                        "GMM component {j} collapsed twice (weight < {GMM_COLLAPSE_WEIGHT})"
                    )));
                }
                reseeded = true;
                // Re-seed the dead component at a random data row with
                // the global covariance; renormalize the weights.
                let idx = rng.below(n);
                state.comps[j] =
                    Gaussian::from_moments(rows[idx * d..][..d].to_vec(), global_cov.clone(), d)?;
                state.weights[j] = 1.0 / k as f64;
                let total: f64 = state.weights.iter().sum();
                for w in &mut state.weights {
                    *w /= total;
                }
                // The reseeded mixture starts a fresh convergence trace;
                // comparing across the discontinuity would either report
                // a spurious decrease or roll the reseed back.
                lls.clear();
                best = None;
                continue;
            }
            None => {
                let total: f64 = next_weights.iter().sum();
                for w in &mut next_weights {
                    *w /= total;
                }
                best = Some(EmState {
                    weights: state.weights.clone(),
                    comps: state.comps.clone(),
                });
                state = EmState {
                    weights: next_weights,
                    comps: next_comps,
                };
            }
        }
    }

    // If the loop broke on a decrease, `best` holds the pre-M-step
    // parameters the last recorded LL was computed under... but only
    // when a subsequent E-step ran. When it did not, `state` matches.
    if converged && lls.len() < GMM_MAX_ITERS {
        if let Some(prev) = best {
            state = prev;
        }
    }

    let report = EmReport {
        iterations: lls.len(),
        log_likelihoods: lls,
        converged,
    };
    Ok((
        DensityModel::GaussianMixture {
            weights: state.weights,
            comps: state.comps,
        },
        report,
    ))
}

/// Draw `n` latent vectors.
pub fn sample(model: &DensityModel, n: usize, rng: &mut Rng) -> Result<Tensor<f64>> {
    if n == 0 {
        return Err(Error::Density("sample count must be positive".into()));
    }
    let d = model.dim();
    let mut out = Tensor::zeros(&[n, d]);
    match model {
        DensityModel::StandardNormal { .. } => {
            for v in out.data_mut() {
                *v = rng.normal();
            }
        }
        DensityModel::FullCovGaussian(g) => {
            for i in 0..n {
                g.sample_into(rng, &mut out.data_mut()[i * d..(i + 1) * d]);
            }
        }
        DensityModel::GaussianMixture { weights, comps } => {
            for i in 0..n {
                let mut target = rng.uniform();
                let mut j = comps.len() - 1;
                for (idx, &w) in weights.iter().enumerate() {
                    target -= w;
                    if target <= 0.0 {
                        j = idx;
                        break;
                    }
                }
                comps[j].sample_into(rng, &mut out.data_mut()[i * d..(i + 1) * d]);
            }
        }
    }
    Ok(out)
}

/// Mean log density of `points` (N x d) under the model.
pub fn log_likelihood<T: Scalar>(model: &DensityModel, points: &Tensor<T>) -> Result<f64> {
    let (rows, n, d) = to_rows(points)?;
    if d != model.dim() {
        return Err(Error::shape(format!(
            "points dim {d} != model dim {}",
            model.dim()
        )));
    }
    if n == 0 {
        return Err(Error::Density("log_likelihood needs N >= 1".into()));
    }
    let mut total = 0.0;
    match model {
        DensityModel::StandardNormal { .. } => {
            for i in 0..n {
                let quad: f64 = rows[i * d..(i + 1) * d].iter().map(|&x| x * x).sum();
                total += -0.5 * (d as f64) * LN_2PI - 0.5 * quad;
            }
        }
        DensityModel::FullCovGaussian(g) => {
            for i in 0..n {
                total += g.log_pdf(&rows[i * d..(i + 1) * d]);
            }
        }
        DensityModel::GaussianMixture { weights, comps } => {
            let mut terms = vec![0.0; comps.len()];
            for i in 0..n {
                let x = &rows[i * d..(i + 1) * d];
                for (t, (g, &w)) in terms.iter_mut().zip(comps.iter().zip(weights)) {
                    *t = w.max(f64::MIN_POSITIVE).ln() + g.log_pdf(x);
                }
                total += logsumexp(&terms);
            }
        }
    }
    Ok(total / n as f64)
}

const KIND_STD_NORMAL: f64 = 0.0;
const KIND_MVG: f64 = 1.0;
const KIND_GMM: f64 = 2.0;

/// Persist to a tensor archive (kind tag, weights, means, covariances).
pub fn save_density(model: &DensityModel, path: impl AsRef<Path>) -> Result<()> {
    let mut archive: Archive<f64> = Archive::new();
    let d = model.dim();
    match model {
        DensityModel::StandardNormal { .. } => {
            archive.insert("kind", Tensor::scalar_value(KIND_STD_NORMAL));
            archive.insert("dim", Tensor::scalar_value(d as f64));
        }
        DensityModel::FullCovGaussian(g) => {
            archive.insert("kind", Tensor::scalar_value(KIND_MVG));
            archive.insert("mean", Tensor::new(vec![d], g.mean.clone())?);
            archive.insert("cov", Tensor::new(vec![d, d], g.cov.clone())?);
        }
        DensityModel::GaussianMixture { weights, comps } => {
            archive.insert("kind", Tensor::scalar_value(KIND_GMM));
            archive.insert("weights", Tensor::new(vec![weights.len()], weights.clone())?);
            for (j, g) in comps.iter().enumerate() {
                archive.insert(format!("mean.{j}"), Tensor::new(vec![d], g.mean.clone())?);
                archive.insert(format!("cov.{j}"), Tensor::new(vec![d, d], g.cov.clone())?);
            }
        }
    }
    archive.save(path)
}

pub fn load_density(path: impl AsRef<Path>) -> Result<DensityModel> {
    let archive: Archive<f64> = Archive::load(path)?;
    let kind = archive.get("kind")?.scalar()?;
    if kind == KIND_STD_NORMAL {
        let dim = archive.get("dim")?.scalar()? as usize;
        Ok(DensityModel::StandardNormal { dim })
    } else if kind == KIND_MVG {
        let mean = archive.get("mean")?;
        let cov = archive.get("cov")?;
        let d = mean.numel();
        Ok(DensityModel::FullCovGaussian(Gaussian::from_moments(
            mean.data().to_vec(),
            cov.data().to_vec(),
            d,
        )?))
    } else if kind == KIND_GMM {
        let weights = archive.get("weights")?.data().to_vec();
        let mut comps = Vec::with_capacity(weights.len());
        for j in 0..weights.len() {
            let mean = archive.get(&format!("mean.{j}"))?;
            let cov = archive.get(&format!("cov.{j}"))?;
            let d = mean.numel();
            comps.push(Gaussian::from_moments(
                mean.data().to_vec(),
                cov.data().to_vec(),
                d,
            )?);
        }
        Ok(DensityModel::GaussianMixture { weights, comps })
    } else {
        Err(Error::Format(format!("unknown density kind {kind}")))
    }
}
