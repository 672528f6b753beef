//! `L(S) - L_inf = R(S)^{-q}` with `R(S) = (a/b) S^{alpha - gamma}`, and the
//! log-log fit that recovers `kappa = q (alpha - gamma)` from samples.

use std::io::{Read, Write};

use hclm_core::dynamics::StepRecord;
use hclm_core::numerics::least_squares_line;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingModel {
    /// Injection amplitude.
    pub a: f64,
    /// Dissipation amplitude.
    pub b: f64,
    pub alpha: f64,
    pub gamma_exp: f64,
    pub q: f64,
    pub l_inf: f64,
}

impl Default for ScalingModel {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 1.0,
            alpha: 1.0,
            gamma_exp: 0.5,
            q: 0.5,
            l_inf: 0.0,
        }
    }
}

impl ScalingModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.b > 0.0) {
            return Err(Error::config(format!("scaling a and b must be > 0, got {} and {}", self.a, self.b)));
        }
        if !(self.alpha >= 0.0 && self.gamma_exp >= 0.0) {
            return Err(Error::config("scaling exponents alpha and gamma_exp must be >= 0"));
        }
        if !(self.q > 0.0) {
            return Err(Error::config(format!("scaling q must be > 0, got {}", self.q)));
        }
        Ok(())
    }

    pub fn kappa(&self) -> f64 {
        self.q * (self.alpha - self.gamma_exp)
    }

    pub fn ratio(&self, s: f64) -> f64 {
        self.a / self.b * s.powf(self.alpha - self.gamma_exp)
    }

    pub fn loss(&self, s: f64) -> Result<f64> {
        Ok(self.l_inf + excess_loss(s, self)?)
    }
}

/// `((a/b) S^{alpha - gamma})^{-q}`.
pub fn excess_loss(s: f64, m: &ScalingModel) -> Result<f64> {
    m.validate()?;
    if !(s > 0.0) {
        return Err(Error::config(format!("scale S must be > 0, got {s}")));
    }
    Ok(m.ratio(s).powf(-m.q))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PowerLawFit {
    pub kappa_hat: f64,
    pub amplitude: f64,
    pub r_squared: f64,
    pub excluded: usize,
}

/// Least squares of `log excess` on `log S`; `kappa_hat` is minus the slope.
/// Points with nonpositive excess are dropped with a warning.
pub fn fit_power_law(samples: &[(f64, f64)]) -> Result<PowerLawFit> {
    if let Some(&(s, _)) = samples.iter().find(|(s, _)| !(*s > 0.0)) {
        return Err(Error::config(format!("scale S must be > 0, got {s}")));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = samples
        .iter()
        .filter(|(_, e)| *e > 0.0)
        .map(|(s, e)| (s.ln(), e.ln()))
        .unzip();
    let excluded = samples.len() - x.len();
    if excluded > 0 {
        log::warn!("{excluded} nonpositive excess values excluded from the power-law fit");
    }
    if x.len() < 3 {
        return Err(Error::TooFewPoints(x.len()));
    }
    let fit = least_squares_line(&x, &y).map_err(|e| Error::config(e.to_string()))?;
    Ok(PowerLawFit {
        kappa_hat: -fit.slope,
        amplitude: fit.intercept.exp(),
        r_squared: fit.r_squared,
        excluded,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RatioTrace {
    pub mean_injection: f64,
    pub mean_dissipation: f64,
    /// `None` when no dissipation was observed.
    pub ratio: Option<f64>,
}

/// Time-averaged injection and dissipation over the second half of a run.
pub fn empirical_ratio_trace(records: &[StepRecord]) -> Result<RatioTrace> {
    if records.is_empty() {
        return Err(Error::config("ratio trace needs a nonempty trajectory"));
    }
    let tail = &records[records.len() / 2..];
    let n = tail.len() as f64;
    let mean_injection = tail.iter().map(|r| r.i_inj).sum::<f64>() / n;
    let mean_dissipation = tail.iter().map(|r| r.d_diss).sum::<f64>() / n;
    let any_d = records.iter().any(|r| r.d_diss > 0.0);
    Ok(RatioTrace {
        mean_injection,
        mean_dissipation,
        ratio: (any_d && mean_dissipation > 0.0).then(|| mean_injection / mean_dissipation),
    })
}

pub const SCALING_HEADER: &str = "S,excess,kappa_hat_running";

/// One row per sample; the running estimate uses the samples up to that row
/// and is empty until three usable points have been seen.
pub fn write_scaling_csv<W: Write>(samples: &[(f64, f64)], mut w: W) -> Result<()> {
    writeln!(w, "{SCALING_HEADER}")?;
    for (i, (s, e)) in samples.iter().enumerate() {
        let running = fit_power_law(&samples[..=i])
            .map(|f| format!("{:.16e}", f.kappa_hat))
            .unwrap_or_default();
        writeln!(w, "{s:.16e},{e:.16e},{running}")?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct ScalingRow {
    #[serde(rename = "S")]
    s: f64,
    excess: f64,
}

/// `(S, excess)` pairs from a scaling CSV; extra columns are ignored.
pub fn read_scaling_csv<R: Read>(r: R) -> Result<Vec<(f64, f64)>> {
    csv::Reader::from_reader(r)
        .deserialize::<ScalingRow>()
        .map(|row| row.map(|r| (r.s, r.excess)).map_err(|e| Error::Table(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: f64, d: f64) -> StepRecord {
        StepRecord {
            t: 0,
            l_pred: 0.0,
            h: 0.0,
            f: 0.0,
            g: 0.0,
            i_inj: i,
            d_diss: d,
            beta_t: 0.0,
            r_t: 0.0,
            gen_gap: None,
            grad_norm_l: 0.0,
            grad_norm_f: 0.0,
        }
    }

    #[test]
    fn excess_examples() {
        let m = ScalingModel::default();
        assert!((excess_loss(16.0, &m).unwrap() - 0.5).abs() < 1e-15);
        let flat = ScalingModel { gamma_exp: 1.0, ..m.clone() };
        assert_eq!(excess_loss(3.0, &flat).unwrap(), excess_loss(300.0, &flat).unwrap());
        assert!(excess_loss(0.0, &m).is_err());
        assert!(excess_loss(1.0, &ScalingModel { q: 0.0, ..m }).is_err());
    }

    #[test]
    fn half_response_exponent() {
        let m = ScalingModel { a: 2.0, b: 3.0, alpha: 0.9, gamma_exp: 0.3, q: 0.5, l_inf: 0.0 };
        let r = excess_loss(64.0, &m).unwrap() / excess_loss(8.0, &m).unwrap();
        assert!((r - 8f64.powf(-(0.9 - 0.3) / 2.0)).abs() < 1e-14);
    }

    #[test]
    fn fit_examples() {
        let m = ScalingModel::default();
        let samples: Vec<(f64, f64)> =
            [4.0, 16.0, 64.0, 256.0].iter().map(|&s| (s, excess_loss(s, &m).unwrap())).collect();
        let f = fit_power_law(&samples).unwrap();
        assert!((f.kappa_hat - 0.25).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let flat = [(1.0, 0.3), (2.0, 0.3), (4.0, 0.3)];
        assert!(fit_power_law(&flat).unwrap().kappa_hat.abs() < 1e-15);
        let holes = [(1.0, 1.0), (2.0, -0.1), (4.0, 0.5), (8.0, 0.0), (16.0, 0.25)];
        let f = fit_power_law(&holes).unwrap();
        assert_eq!(f.excluded, 2);
        assert!(matches!(fit_power_law(&holes[..4]), Err(Error::TooFewPoints(2))));
    }

    #[test]
    fn ratio_trace_examples() {
        assert_eq!(empirical_ratio_trace(&vec![rec(1.0, 0.0); 6]).unwrap().ratio, None);
        let recs = [rec(9.0, 1.0), rec(9.0, 1.0), rec(1.0, 2.0), rec(3.0, 2.0)];
        let t = empirical_ratio_trace(&recs).unwrap();
        assert_eq!((t.mean_injection, t.mean_dissipation, t.ratio), (2.0, 2.0, Some(1.0)));
    }

    #[test]
    fn scaling_csv_round_trips() {
        let samples = vec![(4.0, 0.7), (16.0, 0.5), (64.0, 0.35), (256.0, 0.25)];
        let mut buf = Vec::new();
        write_scaling_csv(&samples, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows[0], SCALING_HEADER);
        assert!(rows[2].ends_with(','));
        assert!(!rows[3].ends_with(','));
        assert_eq!(read_scaling_csv(&buf[..]).unwrap(), samples);
    }
}
