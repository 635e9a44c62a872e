use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// RBF kernel `σ²·exp(−‖a−b‖²/(2ℓ²))`, an optional linear term
/// `w·aᵀb` (dynamics only) and white noise `β` on the diagonal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub length_scale: f64,
    pub noise_variance: f64,
    #[serde(default)]
    pub linear_weight: f64,
}

impl KernelParams {
    pub fn new(signal_variance: f64, length_scale: f64, noise_variance: f64) -> Result<Self> {
        let k = KernelParams { signal_variance, length_scale, noise_variance, linear_weight: 0.0 };
        k.validate()?;
        Ok(k)
    }

    pub fn with_linear_weight(mut self, w: f64) -> Result<Self> {
        self.linear_weight = w;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(self.signal_variance) && pos(self.length_scale) && pos(self.noise_variance)) {
            return Err(Error::invalid("kernel variances and length scale must be positive"));
        }
        if !(self.linear_weight >= 0.0 && self.linear_weight.is_finite()) {
            return Err(Error::invalid("linear weight must be non-negative"));
        }
        Ok(())
    }

    /// `[ln σ², ln ℓ, ln β]`, the unconstrained coordinates the optimizers work in.
    pub fn log_params(&self) -> [f64; 3] {
        [self.signal_variance.ln(), self.length_scale.ln(), self.noise_variance.ln()]
    }

    pub fn from_log_params(p: &[f64], linear_weight: f64) -> Self {
        KernelParams {
            signal_variance: p[0].exp(),
            length_scale: p[1].exp(),
            noise_variance: p[2].exp(),
            linear_weight,
        }
    }

    #[inline]
    pub fn rbf_from_sqdist(&self, r2: f64) -> f64 {
        self.signal_variance * (-0.5 * r2 / (self.length_scale * self.length_scale)).exp()
    }

    /// Noise-free covariance between two points.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let mut k = self.rbf_from_sqdist(r2);
        if self.linear_weight > 0.0 {
            k += self.linear_weight * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        }
        k
    }
}
