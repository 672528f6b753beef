//! Analytic test potentials with exact gradients and Laplacians.

use serde::{Deserialize, Serialize};

pub trait Potential: Send + Sync {
    fn name(&self) -> &str;
    fn value(&self, x: &[f64]) -> f64;
    fn grad(&self, x: &[f64], out: &mut [f64]);
    fn laplacian(&self, x: &[f64]) -> f64;

    fn value1(&self, x: f64) -> f64 {
        self.value(&[x])
    }

    fn grad1(&self, x: f64) -> f64 {
        let mut g = [0.0];
        self.grad(&[x], &mut g);
        g[0]
    }
}

/// `U = k/2 |x|^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quadratic {
    pub stiffness: f64,
}

impl Default for Quadratic {
    fn default() -> Self {
        Self { stiffness: 1.0 }
    }
}

impl Potential for Quadratic {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn value(&self, x: &[f64]) -> f64 {
        0.5 * self.stiffness * x.iter().map(|v| v * v).sum::<f64>()
    }

    fn grad(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = self.stiffness * v;
        }
    }

    fn laplacian(&self, x: &[f64]) -> f64 {
        self.stiffness * x.len() as f64
    }
}

/// `U = sum_i h (x_i^2 - 1)^2 + c x_i`, wells near `x_i = +-1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoubleWell {
    pub height: f64,
    pub tilt: f64,
}

impl Default for DoubleWell {
    fn default() -> Self {
        Self { height: 1.0, tilt: 0.0 }
    }
}

impl Potential for DoubleWell {
    fn name(&self) -> &str {
        "double_well"
    }

    fn value(&self, x: &[f64]) -> f64 {
        x.iter()
            .map(|v| self.height * (v * v - 1.0).powi(2) + self.tilt * v)
            .sum()
    }

    fn grad(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = 4.0 * self.height * v * (v * v - 1.0) + self.tilt;
        }
    }

    fn laplacian(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| 4.0 * self.height * (3.0 * v * v - 1.0)).sum()
    }
}

/// Serializable choice of potential.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    Quadratic { stiffness: f64 },
    DoubleWell { height: f64, tilt: f64 },
}

impl Default for PotentialSpec {
    fn default() -> Self {
        PotentialSpec::Quadratic { stiffness: 1.0 }
    }
}

impl PotentialSpec {
    pub fn build(self) -> Box<dyn Potential> {
        match self {
            PotentialSpec::Quadratic { stiffness } => Box::new(Quadratic { stiffness }),
            PotentialSpec::DoubleWell { height, tilt } => Box::new(DoubleWell { height, tilt }),
        }
    }
}
