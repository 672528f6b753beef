//! Dense symmetric kernels: empirical covariance, log-determinant, SPD solves.

use nalgebra::{DMatrix, DVector};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// How a symmetric positive-definite matrix is factorized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Factorization {
    /// Symmetric eigendecomposition; tolerant of near-singular inputs.
    #[default]
    Eigen,
    /// Cholesky; faster, fails earlier near singularity.
    Cholesky,
}

/// Eigendecomposition of an SPD matrix, kept around so the log-det gradient can reuse it.
#[derive(Clone, Debug)]
pub struct SpdEigen {
    pub eigenvalues: Vec<f64>,
    /// Column-major eigenvectors, `n x n`.
    vectors: DMatrix<f64>,
}

impl SpdEigen {
    pub fn new(m: &Tensor) -> Result<Self> {
        let n = m.require_square("eigen")?;
        let mat = DMatrix::from_row_slice(n, n, m.data());
        let eig = nalgebra::SymmetricEigen::new(mat);
        let eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        if let Some((index, &value)) = eigenvalues
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0) || !v.is_finite())
        {
            return Err(Error::NotPositiveDefinite {
                which: "eigenvalue",
                index,
                value,
            });
        }
        Ok(Self {
            eigenvalues,
            vectors: eig.eigenvectors,
        })
    }

    pub fn log_det(&self) -> f64 {
        self.eigenvalues.iter().map(|v| v.ln()).sum()
    }

    /// `V diag(f(lambda)) V^T` in row-major order.
    pub fn spectral_map(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let n = self.eigenvalues.len();
        let scaled: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for (k, &w) in scaled.iter().enumerate() {
                    s += self.vectors[(i, k)] * w * self.vectors[(j, k)];
                }
                out[i * n + j] = s;
                out[j * n + i] = s;
            }
        }
        out
    }

    pub fn inverse(&self) -> Vec<f64> {
        self.spectral_map(|l| 1.0 / l)
    }
}

/// `(Z - mean)^T (Z - mean) / (B - 1)` together with the centered matrix.
pub fn covariance_with_centered(z: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let (b, p) = z.require_matrix("covariance")?;
    if b < 2 {
        return Err(Error::DegenerateBatch { rows: b });
    }
    let mut mean = vec![0.0; p];
    for i in 0..b {
        for (m, v) in mean.iter_mut().zip(z.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= b as f64);
    let centered: Vec<f64> = (0..b)
        .flat_map(|i| z.row(i).iter().zip(&mean).map(|(v, m)| v - m).collect::<Vec<_>>())
        .collect();
    let denom = (b - 1) as f64;
    let mut cov = vec![0.0; p * p];
    for j in 0..p {
        for k in j..p {
            let s: f64 = (0..b).map(|i| centered[i * p + j] * centered[i * p + k]).sum();
            cov[j * p + k] = s / denom;
            cov[k * p + j] = s / denom;
        }
    }
    Ok((Tensor::new(vec![p, p], cov)?, centered))
}

pub fn covariance(z: &Tensor) -> Result<Tensor> {
    covariance_with_centered(z).map(|(c, _)| c)
}

pub fn log_det_psd(m: &Tensor) -> Result<f64> {
    log_det_psd_with(m, Factorization::default())
}

pub fn log_det_psd_with(m: &Tensor, fac: Factorization) -> Result<f64> {
    match fac {
        Factorization::Eigen => Ok(SpdEigen::new(m)?.log_det()),
        Factorization::Cholesky => {
            let l = cholesky(m)?;
            let n = m.rows();
            Ok(2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>())
        }
    }
}

fn cholesky(m: &Tensor) -> Result<DMatrix<f64>> {
    let n = m.require_square("cholesky")?;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = m.get(j, j);
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite {
                which: "pivot",
                index: j,
                value: d,
            });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `M x = b` for SPD `M` by Cholesky factorization.
pub fn spd_solve(m: &Tensor, b: &[f64]) -> Result<Vec<f64>> {
    let n = m.require_square("spd_solve")?;
    if b.len() != n {
        return Err(Error::shape(
            "spd_solve",
            format!("matrix is {n}x{n}, right-hand side has {}", b.len()),
        ));
    }
    let l = cholesky(m)?;
    let x = l
        .solve_lower_triangular(&DVector::from_column_slice(b))
        .and_then(|y| l.transpose().solve_upper_triangular(&y))
        .ok_or(Error::NotPositiveDefinite {
            which: "pivot",
            index: 0,
            value: 0.0,
        })?;
    Ok(x.iter().copied().collect())
}
