//! Small dense linear algebra in `f64`: Cholesky factorization and a
//! cyclic Jacobi eigensolver for symmetric matrices. Matrices are flat
//! row-major `Vec<f64>` slices of square dimension `d`.

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive-definite
/// matrix. Fails if a pivot is non-positive.
pub fn cholesky(a: &[f64], d: usize) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), d * d);
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[i * d + j];
            for k in 0..j {
                sum -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::Linalg(format!(
                        "cholesky pivot {sum:.3e} at row {i} is not positive"
                    )));
                }
                l[i * d + i] = sum.sqrt();
            } else {
                l[i * d + j] = sum / l[j * d + j];
            }
        }
    }
    Ok(l)
}

/// Solve L y = b with L lower-triangular.
pub fn forward_substitute(l: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut y = vec![0.0; d];
    for i in 0..d {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * d + k] * y[k];
        }
        y[i] = sum / l[i * d + i];
    }
    y
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues (descending) and, when requested, the matching
/// eigenvectors as rows of a d x d matrix.
pub fn jacobi_eigen(a: &[f64], d: usize, with_vectors: bool) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    debug_assert_eq!(a.len(), d * d);
    let mut m = a.to_vec();
    let mut v = if with_vectors {
        let mut id = vec![0.0; d * d];
        for i in 0..d {
            id[i * d + i] = 1.0;
        }
        Some(id)
    } else {
        None
    };
    if d <= 1 {
        let vals = if d == 1 { vec![m[0]] } else { vec![] };
        return Ok((vals, v));
    }

    let scale: f64 = m
        .iter()
        .fold(0.0_f64, |acc, &x| acc.max(x.abs()))
        .max(f64::MIN_POSITIVE);
    let tol = 1e-14 * scale;
    const MAX_SWEEPS: usize = 64;

    for _sweep in 0..MAX_SWEEPS {
        let mut off: f64 = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                off = off.max(m[p * d + q].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m[p * d + q];
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                let app = m[p * d + p];
                let aqq = m[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // Rotate rows/cols p and q.
                for i in 0..d {
                    let aip = m[i * d + p];
                    let aiq = m[i * d + q];
                    m[i * d + p] = c * aip - s * aiq;
                    m[i * d + q] = s * aip + c * aiq;
                }
                for i in 0..d {
                    let api = m[p * d + i];
                    let aqi = m[q * d + i];
                    m[p * d + i] = c * api - s * aqi;
                    m[q * d + i] = s * api + c * aqi;
                }
                if let Some(vecs) = v.as_mut() {
                    for i in 0..d {
                        let vpi = vecs[p * d + i];
                        let vqi = vecs[q * d + i];
                        vecs[p * d + i] = c * vpi - s * vqi;
                        vecs[q * d + i] = s * vpi + c * vqi;
                    }
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    let diag: Vec<f64> = (0..d).map(|i| m[i * d + i]).collect();
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let vecs = v.map(|vecs| {
        let mut sorted = vec![0.0; d * d];
        for (r, &i) in order.iter().enumerate() {
            sorted[r * d..(r + 1) * d].copy_from_slice(&vecs[i * d..(i + 1) * d]);
        }
        sorted
    });
    Ok((vals, vecs))
}

/// C = A * B for flat row-major matrices.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    crate::ops::matmul_acc(a, b, &mut c, m, k, n);
    c
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

pub fn frobenius(a: &[f64]) -> f64 {
    a.iter().map(|&x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn cholesky_known() {
        // [[4, 2], [2, 3]] = L L^T with L = [[2, 0], [1, sqrt(2)]]
        let a = [4.0, 2.0, 2.0, 3.0];
        let l = cholesky(&a, 2).unwrap();
        assert!((l[0] - 2.0).abs() < 1e-12);
        assert!((l[2] - 1.0).abs() < 1e-12);
        assert!((l[3] - 2.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = [1.0, 2.0, 2.0, 1.0];
        assert!(cholesky(&a, 2).is_err());
    }

    #[test]
    fn jacobi_diagonal() {
        let a = [3.0, 0.0, 0.0, 1.0];
        let (vals, _) = jacobi_eigen(&a, 2, false).unwrap();
        assert!((vals[0] - 3.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jacobi_reconstructs_random_symmetric() {
        let mut rng = Rng::new(9);
        for d in [2usize, 5, 16] {
            let mut a = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..=i {
                    let x = rng.normal();
                    a[i * d + j] = x;
                    a[j * d + i] = x;
                }
            }
            let (vals, vecs) = jacobi_eigen(&a, d, true).unwrap();
            let vecs = vecs.unwrap();
            // Reconstruct V^T diag(vals) V (eigenvectors stored as rows).
            let mut lv = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    lv[i * d + j] = vals[i] * vecs[i * d + j];
                }
            }
            let vt = transpose(&vecs, d, d);
            let rec = matmul(&vt, &lv, d, d, d);
            let mut diff = 0.0;
            for i in 0..d * d {
                diff += (rec[i] - a[i]).powi(2);
            }
            assert!(diff.sqrt() < 1e-9 * frobenius(&a).max(1.0), "d={d}");
        }
    }
}
