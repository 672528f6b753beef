//! Central finite differences, the independent oracle for reverse-mode gradients.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `(f(theta + h e_i) - f(theta - h e_i)) / 2h` for every coordinate `i`.
pub fn finite_diff_grad<F>(f: F, theta: &Tensor, h: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::config(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut probe = theta.clone();
    probe.zero_grad();
    let mut out = Vec::with_capacity(theta.numel());
    for i in 0..theta.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.push((fp - fm) / (2.0 * h));
    }
    Tensor::new(theta.shape().to_vec(), out)
}

/// `||a - b|| / max(||a||, ||b||, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = super::norm(a).max(super::norm(b)).max(floor);
    diff / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let g = finite_diff_grad(|t| Ok(t.data()[0].powi(2)), &Tensor::vector(vec![3.0]), 1e-4)
            .unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-7);
    }

    #[test]
    fn linear_is_exact_for_any_step() {
        let f = |t: &Tensor| Ok(2.5 * t.data()[0] - 4.0 * t.data()[1] + 1.0);
        for h in [1e-6, 1e-2, 1.0, 10.0] {
            let g = finite_diff_grad(f, &Tensor::vector(vec![0.3, -7.0]), h).unwrap();
            assert!((g.data()[0] - 2.5).abs() < 1e-9 && (g.data()[1] + 4.0).abs() < 1e-9);
        }
    }

    #[test]
    fn half_squared_distance() {
        let f = |t: &Tensor| Ok(0.5 * t.data().iter().map(|x| x * x).sum::<f64>());
        let g = finite_diff_grad(f, &Tensor::vector(vec![3.0, 4.0]), 1e-4).unwrap();
        assert!((g.data()[0] - 3.0).abs() < 1e-9 && (g.data()[1] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_non_positive_step() {
        let f = |_: &Tensor| Ok(0.0);
        assert!(finite_diff_grad(f, &Tensor::vector(vec![1.0]), 0.0).is_err());
    }
}
