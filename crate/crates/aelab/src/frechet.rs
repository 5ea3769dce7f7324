//! Fréchet distance between feature distributions of two image sets,
//! with a PSD matrix square root and pluggable feature extractors.
//!
//! The distance is ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)),
//! evaluated through the symmetric form (Sa^(1/2) Sb Sa^(1/2))^(1/2).
//! For feature dimensions above [`GRAM_THRESHOLD`] the trace of the
//! square root is taken from the singular values of the centered,
//! scaled cross-Gram matrix instead: the nonzero eigenvalues of
//! Sa Sb = A~^T A~ B~^T B~ equal those of (A~ B~^T)(A~ B~^T)^T, so
//! Tr (Sa Sb)^(1/2) = sum_i sigma_i(A~ B~^T) — an N x N problem rather
//! than a d x d one.

use std::path::PathBuf;

use crate::container::load_tensor;
use crate::error::{Error, Result};
use crate::linalg;
use crate::ops;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Empirical feature moments of one side of a comparison.
#[derive(Clone, Debug)]
pub struct FrechetStats {
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
    pub count: usize,
    pub dim: usize,
}

/// Mean and unbiased covariance of N x d features.
pub fn compute_stats<T: Scalar>(features: &Tensor<T>) -> Result<FrechetStats> {
    let s = features.shape();
    if s.len() != 2 {
        return Err(Error::shape(format!("features must be N x d, got {s:?}")));
    }
    let (n, d) = (s[0], s[1]);
    if n < 2 {
        return Err(Error::Density(format!("compute_stats needs N >= 2, got {n}")));
    }
    let rows: Vec<f64> = features
        .data()
        .iter()
        .map(|&v| <T as Scalar>::to_f64(v))
        .collect();
    let mut mean = vec![0.0; d];
    for row in rows.chunks_exact(d) {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    let mut diff = vec![0.0; d];
    for row in rows.chunks_exact(d) {
        for (j, (dst, &x)) in diff.iter_mut().zip(row).enumerate() {
            *dst = x - mean[j];
        }
        for a in 0..d {
            for b in a..d {
                cov[a * d + b] += diff[a] * diff[b];
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / denom;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    Ok(FrechetStats { mean, cov, count: n, dim: d })
}

/// Symmetric PSD square root via a Jacobi eigendecomposition.
/// Eigenvalues in [-1e-8 * scale, 0) are clipped to 0; anything more
/// negative is an error.
pub fn matrix_sqrt_psd(m: &[f64], d: usize) -> Result<Vec<f64>> {
    if m.len() != d * d {
        return Err(Error::shape("matrix_sqrt_psd: not square"));
    }
    let scale = m.iter().fold(0.0f64, |a, &x| a.max(x.abs())).max(1.0);
    for i in 0..d {
        for j in (i + 1)..d {
            if (m[i * d + j] - m[j * d + i]).abs() > 1e-6 * scale {
                return Err(Error::Linalg(format!(
                    "matrix_sqrt_psd: asymmetric at ({i},{j})"
                )));
            }
        }
    }
    let (mut vals, vecs) = linalg::jacobi_eigen(m, d, true)?;
    let vecs = vecs.expect("vectors requested");
    let tol = 1e-8 * scale;
    for v in &mut vals {
        if *v < -tol {
            return Err(Error::Linalg(format!(
                "matrix_sqrt_psd: eigenvalue {v:.3e} below -{tol:.3e}"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    // R = V^T diag(sqrt(vals)) V with eigenvectors stored as rows.
    let mut scaled = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            scaled[i * d + j] = vals[i] * vecs[i * d + j];
        }
    }
    let vt = linalg::transpose(&vecs, d, d);
    Ok(linalg::matmul(&vt, &scaled, d, d, d))
}

/// Fréchet distance between two Gaussians given by their moments.
pub fn frechet_distance(a: &FrechetStats, b: &FrechetStats) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::shape(format!(
            "frechet_distance: dims {} vs {}",
            a.dim, b.dim
        )));
    }
    let d = a.dim;
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let sqrt_a = matrix_sqrt_psd(&a.cov, d)?;
    let inner = {
        let t = linalg::matmul(&sqrt_a, &b.cov, d, d, d);
        linalg::matmul(&t, &sqrt_a, d, d, d)
    };
    let root = matrix_sqrt_psd(&inner, d)?;
    let mut trace = 0.0;
    for i in 0..d {
        trace += a.cov[i * d + i] + b.cov[i * d + i] - 2.0 * root[i * d + i];
    }
    let mut tr_sum = 0.0;
    for i in 0..d {
        tr_sum += a.cov[i * d + i] + b.cov[i * d + i];
    }
    clamp_nonneg(mean_term + trace, tr_sum)
}

// Roundoff in the square roots scales with the covariance traces, so
// the tolerance for "negative but effectively zero" does too.
fn clamp_nonneg(fid: f64, trace_scale: f64) -> Result<f64> {
    let tol = 1e-6 * trace_scale.max(1.0);
    if fid < -tol {
        return Err(Error::numeric(format!(
            "Fréchet distance {fid:.3e} below -{tol:.3e}"
        )));
    }
    Ok(fid.max(0.0))
}

/// Feature dimension above which the distance is computed through the
/// cross-Gram singular values instead of d x d covariance matrices.
pub const GRAM_THRESHOLD: usize = 512;

/// Center rows, scale by 1/sqrt(N-1), and return (scaled rows, mean,
/// trace of the implied covariance).
fn centered_scaled(features: &Tensor<f64>) -> (Vec<f64>, Vec<f64>, f64) {
    let (n, d) = (features.shape()[0], features.shape()[1]);
    let mut mean = vec![0.0; d];
    for row in features.data().chunks_exact(d) {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let s = 1.0 / ((n - 1) as f64).sqrt();
    let mut rows = vec![0.0; n * d];
    let mut trace = 0.0;
    for (i, row) in features.data().chunks_exact(d).enumerate() {
        for (j, &x) in row.iter().enumerate() {
            let c = (x - mean[j]) * s;
            rows[i * d + j] = c;
            trace += c * c;
        }
    }
    (rows, mean, trace)
}

/// Fréchet distance from raw feature rows, choosing the covariance or
/// Gram evaluation by dimension.
pub fn frechet_from_features(fa: &Tensor<f64>, fb: &Tensor<f64>) -> Result<f64> {
    let (sa, sb) = (fa.shape(), fb.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
        return Err(Error::shape(format!(
            "feature shapes {sa:?} vs {sb:?} incompatible"
        )));
    }
    if sa[1] <= GRAM_THRESHOLD {
        return frechet_distance(&compute_stats(fa)?, &compute_stats(fb)?);
    }
    if sa[0] < 2 || sb[0] < 2 {
        return Err(Error::Density("frechet_from_features needs N >= 2 per side".to_string()));
    }
    frechet_gram(fa, fb)
}

fn frechet_gram(fa: &Tensor<f64>, fb: &Tensor<f64>) -> Result<f64> {
    let d = fa.shape()[1];
    let (na, nb) = (fa.shape()[0], fb.shape()[0]);
    let (a_rows, a_mean, tr_a) = centered_scaled(fa);
    let (b_rows, b_mean, tr_b) = centered_scaled(fb);
    let mean_term: f64 = a_mean
        .iter()
        .zip(&b_mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    // M = A~ B~^T (na x nb); singular values from the smaller Gram side.
    let mut m = vec![0.0; na * nb];
    ops::matmul_abt_acc(&a_rows, &b_rows, &mut m, na, d, nb);
    let k = na.min(nb);
    let gram = if nb <= na {
        // M^T M (nb x nb)
        let mut g = vec![0.0; nb * nb];
        ops::matmul_atb_acc(&m, &m, &mut g, nb, na, nb);
        g
    } else {
        // M M^T (na x na)
        let mut g = vec![0.0; na * na];
        ops::matmul_abt_acc(&m, &m, &mut g, na, nb, na);
        g
    };
    let (vals, _) = linalg::jacobi_eigen(&gram, k, false)?;
    let tr_sqrt: f64 = vals.iter().map(|&v| v.max(0.0).sqrt()).sum();
    clamp_nonneg(mean_term + tr_a + tr_b - 2.0 * tr_sqrt, tr_a + tr_b)
}

pub const RANDOM_PROJECTION_DIM: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Generated,
    Reference,
}

/// Maps image sets to feature rows. The same extractor must be used for
/// both sides of a comparison.
#[derive(Clone, Debug)]
pub enum FeatureExtractor {
    /// Flatten to d = 3 * H * W.
    Pixels,
    /// Fixed seeded Gaussian projection to `dim` features.
    RandomProjection { seed: u64, dim: usize },
    /// Precomputed embeddings, one tensor file (N x d) per side.
    External { generated: PathBuf, reference: PathBuf },
}

impl FeatureExtractor {
    pub fn extract(&self, images: &Tensor<f32>, side: Side) -> Result<Tensor<f64>> {
        let s = images.shape();
        if s.len() != 4 {
            return Err(Error::shape(format!("images must be N x C x H x W, got {s:?}")));
        }
        let n = s[0];
        let d_in: usize = s[1..].iter().product();
        match self {
            FeatureExtractor::Pixels => {
                Ok(Tensor::from_fn(&[n, d_in], |i| images.data()[i] as f64))
            }
            FeatureExtractor::RandomProjection { seed, dim } => {
                let mut rng = Rng::stream(*seed, 0x4658);
                let scale = 1.0 / (d_in as f64).sqrt();
                // Projection rows are generated in a fixed order, so the
                // matrix is identical across calls with one seed.
                let proj: Vec<f64> = (0..d_in * dim).map(|_| rng.normal() * scale).collect();
                let flat: Vec<f64> = images.data().iter().map(|&v| v as f64).collect();
                let mut out = vec![0.0; n * dim];
                ops::matmul_acc(&flat, &proj, &mut out, n, d_in, *dim);
                Tensor::new(vec![n, *dim], out)
            }
            FeatureExtractor::External { generated, reference } => {
                let path = match side {
                    Side::Generated => generated,
                    Side::Reference => reference,
                };
                let t: Tensor<f64> = load_tensor(path)?;
                if t.rank() != 2 {
                    return Err(Error::Format(format!(
                        "external embeddings must be N x d, got {:?}",
                        t.shape()
                    )));
                }
                if t.shape()[0] != n {
                    return Err(Error::Data(format!(
                        "external embeddings have {} rows for {n} images",
                        t.shape()[0]
                    )));
                }
                Ok(t)
            }
        }
    }
}

/// Full pipeline: extract features from both image sets with the same
/// extractor and return their Fréchet distance.
pub fn fid_pipeline(
    generated: &Tensor<f32>,
    reference: &Tensor<f32>,
    fx: &FeatureExtractor,
) -> Result<f64> {
    let fa = fx.extract(generated, Side::Generated)?;
    let fb = fx.extract(reference, Side::Reference)?;
    frechet_from_features(&fa, &fb)
}
