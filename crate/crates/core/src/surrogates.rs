//! Differentiable entropy surrogates of a batch representation `Z` (`B x p`),
//! the noisy representation `Z + xi`, and Gaussian information bounds.

use std::f64::consts::{E, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{covariance, log_det_psd, rng, Graph, Tensor, Var};

const NOISE_STREAM: u64 = 0x6e_6f69_7365;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateKind {
    Softmax,
    Variance,
    LogDet,
}

impl SurrogateKind {
    pub const ALL: [SurrogateKind; 3] = [Self::Softmax, Self::Variance, Self::LogDet];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Softmax => "softmax",
            Self::Variance => "variance",
            Self::LogDet => "logdet",
        }
    }
}

impl fmt::Display for SurrogateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SurrogateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Self::Softmax),
            "variance" => Ok(Self::Variance),
            "logdet" => Ok(Self::LogDet),
            other => Err(Error::config(format!(
                "unknown surrogate {other:?} (expected softmax, variance or logdet)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateConfig {
    pub kind: SurrogateKind,
    /// Ridge added to the covariance before the log-determinant.
    pub epsilon: f64,
    /// Standard deviation of the representation noise.
    pub sigma_xi: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            kind: SurrogateKind::LogDet,
            epsilon: 1e-4,
            sigma_xi: 0.1,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::config(format!(
                "surrogate.epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !(self.sigma_xi >= 0.0) {
            return Err(Error::config(format!(
                "surrogate.sigma_xi must be >= 0, got {}",
                self.sigma_xi
            )));
        }
        Ok(())
    }
}

/// Gaussian noise `xi` with entries i.i.d. `N(0, sigma_xi^2)`, shaped like `z`.
pub fn noise_like(shape: &[usize], sigma_xi: f64, seed: u64) -> Tensor {
    let numel = shape.iter().product();
    let data = if sigma_xi == 0.0 {
        vec![0.0; numel]
    } else {
        rng::normal_vec(&mut rng::stream(seed, NOISE_STREAM), numel, sigma_xi)
    };
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

/// `Z + xi` on plain values.
pub fn noisy_rep(z: &Tensor, sigma_xi: f64, seed: u64) -> Result<Tensor> {
    if !(sigma_xi >= 0.0) {
        return Err(Error::config(format!("sigma_xi must be >= 0, got {sigma_xi}")));
    }
    if sigma_xi == 0.0 {
        let mut out = z.clone();
        out.zero_grad();
        return Ok(out);
    }
    let xi = noise_like(z.shape(), sigma_xi, seed);
    let data = z.data().iter().zip(xi.data()).map(|(a, b)| a + b).collect();
    Tensor::new(z.shape().to_vec(), data)
}

/// `Z + xi` on the tape. The noise enters as a constant, so gradients flow
/// through `Z` only.
pub fn noisy_rep_var(g: &Graph, z: Var, sigma_xi: f64, seed: u64) -> Result<Var> {
    if !(sigma_xi >= 0.0) {
        return Err(Error::config(format!("sigma_xi must be >= 0, got {sigma_xi}")));
    }
    if sigma_xi == 0.0 {
        return Ok(z);
    }
    let xi = g.constant(noise_like(&g.shape(z), sigma_xi, seed));
    g.add(z, xi)
}

/// `1/2 log det(Cov(Z) + epsilon I)`.
pub fn entropy_logdet(g: &Graph, z: Var, epsilon: f64) -> Result<Var> {
    if !(epsilon > 0.0) {
        return Err(Error::config(format!("epsilon must be > 0, got {epsilon}")));
    }
    let cov = g.covariance(z)?;
    let reg = g.add_identity(cov, epsilon)?;
    let ld = g.log_det_spd(reg)?;
    Ok(g.scale(ld, 0.5))
}

/// `tr(Cov(Z)) / p`.
pub fn entropy_variance(g: &Graph, z: Var) -> Result<Var> {
    let cov = g.covariance(z)?;
    let p = g.shape(cov)[0];
    let tr = g.trace(cov)?;
    Ok(g.scale(tr, 1.0 / p as f64))
}

/// Batch mean of the Shannon entropy of the row-wise softmax of `Z`.
pub fn entropy_softmax(g: &Graph, z: Var) -> Result<Var> {
    let shape = g.shape(z);
    if shape.len() != 2 || shape[1] < 2 {
        return Err(Error::shape(
            "entropy_softmax",
            format!("needs a B x p matrix with p >= 2, got {shape:?}"),
        ));
    }
    let q = g.softmax(z);
    let log_q = g.log_softmax(z);
    let plogp = g.inner(q, log_q)?;
    Ok(g.scale(plogp, -1.0 / shape[0] as f64))
}

pub fn surrogate(g: &Graph, z: Var, cfg: &SurrogateConfig) -> Result<Var> {
    match cfg.kind {
        SurrogateKind::LogDet => entropy_logdet(g, z, cfg.epsilon),
        SurrogateKind::Variance => entropy_variance(g, z),
        SurrogateKind::Softmax => entropy_softmax(g, z),
    }
}

/// Value-only evaluation of a surrogate.
pub fn surrogate_value(z: &Tensor, cfg: &SurrogateConfig) -> Result<f64> {
    let g = Graph::new();
    let zv = g.constant(z.clone());
    let h = surrogate(&g, zv, cfg)?;
    g.scalar(h)
}

/// Maximum differential entropy at covariance `Sigma`: `1/2 log det(2 pi e Sigma)`.
pub fn gaussian_entropy_bound(sigma: &Tensor) -> Result<f64> {
    let p = sigma.require_square("gaussian_entropy_bound")? as f64;
    Ok(0.5 * (p * (2.0 * PI * E).ln() + log_det_psd(sigma)?))
}

/// Upper bound on `I(X; Z + xi) = H(Z + xi) - H(xi)` using the Gaussian
/// maximum-entropy bound for the first term, clipped at zero.
pub fn mutual_info_upper(z_noisy: &Tensor, sigma_xi: f64) -> Result<f64> {
    if !(sigma_xi > 0.0) {
        return Err(Error::UndefinedInformation(sigma_xi));
    }
    let cov = covariance(z_noisy)?;
    let p = cov.rows() as f64;
    let noise_entropy = 0.5 * p * (2.0 * PI * E * sigma_xi * sigma_xi).ln();
    Ok((gaussian_entropy_bound(&cov)? - noise_entropy).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;

    fn rows(r: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(r).unwrap()
    }

    fn value(z: &Tensor, kind: SurrogateKind, epsilon: f64) -> f64 {
        let cfg = SurrogateConfig {
            kind,
            epsilon,
            sigma_xi: 0.0,
        };
        surrogate_value(z, &cfg).unwrap()
    }

    #[test]
    fn kind_strings() {
        for k in SurrogateKind::ALL {
            assert_eq!(k.as_str().parse::<SurrogateKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.as_str()));
        }
        assert!("LogDet".parse::<SurrogateKind>().is_err());
        let back: SurrogateKind = serde_json::from_str("\"variance\"").unwrap();
        assert_eq!(back, SurrogateKind::Variance);
    }

    #[test]
    fn zero_noise_is_identity_and_seed_is_deterministic() {
        let z = rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(noisy_rep(&z, 0.0, 9).unwrap(), z);
        let a = noisy_rep(&z, 0.3, 42).unwrap();
        let b = noisy_rep(&z, 0.3, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, noisy_rep(&z, 0.3, 43).unwrap());
    }

    #[test]
    fn noise_mean_is_zero() {
        let sigma = 0.7;
        let z = Tensor::zeros(&[1000, 100]);
        let zn = noisy_rep(&z, sigma, 5).unwrap();
        let n = zn.numel() as f64;
        let mean = zn.data().iter().sum::<f64>() / n;
        assert!(mean.abs() <= 3.0 * sigma / n.sqrt(), "mean {mean}");
    }

    #[test]
    fn logdet_unit_covariance() {
        // columns +-1 over four rows with zero mean and unit covariance: B - 1 = 3
        let s = (3.0f64 / 4.0).sqrt();
        let z = rows(&[
            vec![s, s],
            vec![s, -s],
            vec![-s, s],
            vec![-s, -s],
        ]);
        let cov = covariance(&z).unwrap();
        assert!((cov.get(0, 0) - 1.0).abs() < 1e-14 && cov.get(0, 1).abs() < 1e-14);
        let h = value(&z, SurrogateKind::LogDet, 0.01);
        assert!((h - 1.01f64.ln()).abs() < 1e-12, "{h}");
    }

    #[test]
    fn logdet_hand_example() {
        let z = rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]);
        let h = value(&z, SurrogateKind::LogDet, 0.01);
        let expected = 0.5 * (2.01f64 * 2.01 - 4.0).ln();
        assert!((h - expected).abs() < 1e-12);
        assert!((h + 1.6082).abs() < 1e-4);
    }

    #[test]
    fn logdet_increases_with_epsilon() {
        let z = rows(&[vec![1.0, 0.3, 2.0], vec![-1.0, 0.2, 0.0], vec![0.5, 0.5, 0.5]]);
        let mut prev = f64::NEG_INFINITY;
        for eps in [1e-6, 1e-4, 1e-2, 1.0, 10.0] {
            let h = value(&z, SurrogateKind::LogDet, eps);
            assert!(h > prev);
            prev = h;
        }
    }

    #[test]
    fn logdet_floor_at_constant_rows() {
        let z = rows(&[vec![2.0, 1.0, 0.0], vec![2.0, 1.0, 0.0], vec![2.0, 1.0, 0.0]]);
        let eps = 1e-3;
        let h = value(&z, SurrogateKind::LogDet, eps);
        assert!((h - 1.5 * eps.ln()).abs() < 1e-12);
    }

    #[test]
    fn variance_examples() {
        let z = rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]);
        assert!((value(&z, SurrogateKind::Variance, 1.0) - 2.0).abs() < 1e-15);
        let c = rows(&[vec![4.0, 4.0], vec![4.0, 4.0], vec![4.0, 4.0]]);
        assert_eq!(value(&c, SurrogateKind::Variance, 1.0), 0.0);
        let z3 = rows(&[vec![1.0, 0.5], vec![-2.0, 1.0], vec![0.3, 0.3]]);
        let scaled = rows(&[vec![3.0, 1.5], vec![-6.0, 3.0], vec![0.9, 0.9]]);
        let (a, b) = (
            value(&z3, SurrogateKind::Variance, 1.0),
            value(&scaled, SurrogateKind::Variance, 1.0),
        );
        assert!((b - 9.0 * a).abs() < 1e-12);
    }

    #[test]
    fn softmax_examples() {
        let p = 4;
        let uniform = rows(&[vec![0.7; p], vec![-3.0; p]]);
        assert!((value(&uniform, SurrogateKind::Softmax, 1.0) - (p as f64).ln()).abs() < 1e-14);

        let peaked = rows(&[vec![10.0, 0.0, 0.0, 0.0]]);
        assert!(value(&peaked, SurrogateKind::Softmax, 1.0) <= 0.01);

        let z = rows(&[vec![1.0, 2.0, -1.0, 0.5], vec![0.0, 0.0, 3.0, 1.0]]);
        let shifted = rows(&[vec![11.0, 12.0, 9.0, 10.5], vec![-2.0, -2.0, 1.0, -1.0]]);
        let (a, b) = (
            value(&z, SurrogateKind::Softmax, 1.0),
            value(&shifted, SurrogateKind::Softmax, 1.0),
        );
        assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn softmax_needs_two_columns() {
        let g = Graph::new();
        let z = g.constant(rows(&[vec![1.0], vec![2.0]]));
        assert!(entropy_softmax(&g, z).is_err());
    }

    #[test]
    fn covariance_surrogates_need_two_rows() {
        let g = Graph::new();
        let z = g.constant(rows(&[vec![1.0, 2.0]]));
        assert!(matches!(entropy_variance(&g, z), Err(Error::DegenerateBatch { .. })));
        assert!(matches!(entropy_logdet(&g, z, 1e-4), Err(Error::DegenerateBatch { .. })));
    }

    #[test]
    fn gaussian_bound_examples() {
        let one = rows(&[vec![1.0]]);
        assert!((gaussian_entropy_bound(&one).unwrap() - 1.418_938_533_204_672_7).abs() < 1e-12);
        let tiny = rows(&[vec![1.0 / (2.0 * PI * E)]]);
        assert!(gaussian_entropy_bound(&tiny).unwrap().abs() < 1e-14);
        let s = rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]);
        let s3 = rows(&[vec![6.0, 0.9], vec![0.9, 3.0]]);
        let diff = gaussian_entropy_bound(&s3).unwrap() - gaussian_entropy_bound(&s).unwrap();
        assert!((diff - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mutual_info_examples() {
        let sigma = 0.2;
        let constant = Tensor::zeros(&[4000, 2]);
        let zn = noisy_rep(&constant, sigma, 11).unwrap();
        assert!(mutual_info_upper(&zn, sigma).unwrap() < 0.01);

        // p = 1, sample variance exactly 4 sigma^2 by construction
        let b = 2;
        let d = (2.0f64).sqrt() * sigma * ((b - 1) as f64 / 1.0).sqrt();
        let z = Tensor::new(vec![b, 1], vec![d, -d]).unwrap();
        let cov = covariance(&z).unwrap();
        assert!((cov.data()[0] - 4.0 * sigma * sigma).abs() < 1e-15);
        assert!((mutual_info_upper(&z, sigma).unwrap() - 0.5 * 4f64.ln()).abs() < 1e-12);

        let weak = noisy_rep(&Tensor::new(vec![4000, 1], (0..4000).map(|i| (i % 2) as f64 * 0.1).collect()).unwrap(), sigma, 3).unwrap();
        let strong = noisy_rep(&Tensor::new(vec![4000, 1], (0..4000).map(|i| (i % 2) as f64).collect()).unwrap(), sigma, 3).unwrap();
        assert!(mutual_info_upper(&strong, sigma).unwrap() > mutual_info_upper(&weak, sigma).unwrap());

        assert!(matches!(
            mutual_info_upper(&z, 0.0),
            Err(Error::UndefinedInformation(_))
        ));
    }

    #[test]
    fn surrogate_gradients_match_finite_differences() {
        let mut r = rng::stream(2024, 0);
        for kind in SurrogateKind::ALL {
            for trial in 0..5 {
                let z0 = Tensor::new(vec![8, 4], rng::normal_vec(&mut r, 32, 1.0)).unwrap();
                let cfg = SurrogateConfig {
                    kind,
                    epsilon: 1e-2,
                    sigma_xi: 0.0,
                };
                let g = Graph::new();
                let z = g.leaf(z0.clone());
                let h = surrogate(&g, z, &cfg).unwrap();
                let analytic = g.gradient(h, z).unwrap();
                let fd = finite_diff_grad(|t| surrogate_value(t, &cfg), &z0, 1e-4).unwrap();
                let err = crate::numerics::relative_error(&analytic, fd.data(), 1e-12);
                assert!(err <= 1e-5, "{kind} trial {trial}: rel err {err}");
            }
        }
    }
}
