//! Noise model, scaling laws and closed-form rate formulas.

use crate::error::{invalid, Error, Result};
use crate::kernel::SpatialKernel;

/// Parameters of the driving noise: temporal exponent `alpha0`, spatial
/// exponent `alpha`, dimension `d`, intensity `lambda` and the spatial kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceModel {
    alpha0: f64,
    alpha: f64,
    d: usize,
    lambda: f64,
    kernel: SpatialKernel,
}

impl CovarianceModel {
    pub fn new(alpha0: f64, alpha: f64, d: usize, lambda: f64, kernel: SpatialKernel) -> Result<Self> {
        if !(alpha0 > 0.0 && alpha0 < 1.0) {
            return Err(invalid(format!("alpha0 must lie in (0, 1), got {alpha0}")));
        }
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(invalid(format!("alpha must lie in (0, 2), got {alpha}")));
        }
        if d == 0 {
            return Err(invalid("d must be at least 1"));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(invalid(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        kernel.check_shape(alpha, d)?;
        Ok(Self { alpha0, alpha, d, lambda, kernel })
    }

    /// Riesz kernel model.
    pub fn riesz(alpha0: f64, alpha: f64, d: usize, lambda: f64) -> Result<Self> {
        Self::new(alpha0, alpha, d, lambda, SpatialKernel::Riesz)
    }

    /// Spatial white noise in `d = 1` (`alpha = 1`).
    pub fn delta(alpha0: f64, lambda: f64) -> Result<Self> {
        Self::new(alpha0, 1.0, 1, lambda, SpatialKernel::Delta)
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kernel(&self) -> SpatialKernel {
        self.kernel
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.alpha0, self.alpha, self.d, lambda, self.kernel)
    }

    /// Engines that integrate the kernel call this first.
    pub fn require_integrable(&self) -> Result<()> {
        self.kernel.check_integrable(self.alpha, self.d)
    }

    /// `2 / (2 - alpha)`, the exponent of `lambda` in the scaling of the variation.
    pub fn lambda_exponent(&self) -> f64 {
        2.0 / (2.0 - self.alpha)
    }
}

/// `|t|^{-alpha0}`.
pub fn gamma_temporal(model: &CovarianceModel, t: f64) -> Result<f64> {
    if t == 0.0 {
        return Err(Error::Singularity("temporal kernel at t = 0".into()));
    }
    Ok(t.abs().powf(-model.alpha0))
}

/// Spatial kernel at `x`; the Riesz kernel gives `|x|^{-alpha}`.
pub fn gamma_spatial(model: &CovarianceModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.d {
        return Err(invalid(format!("point has dimension {}, model has d = {}", x.len(), model.d)));
    }
    model.kernel.eval(model.alpha, x)
}

/// `(4 - alpha - 2 alpha0) / (2 - alpha)`, the power of `t` in the moment asymptotics.
pub fn time_rate_exponent(model: &CovarianceModel) -> f64 {
    (4.0 - model.alpha - 2.0 * model.alpha0) / (2.0 - model.alpha)
}

/// Predicted growth rate of `E u^p` on the scale `t^{time_exponent}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePrediction {
    pub time_exponent: f64,
    pub coefficient: f64,
    pub order: f64,
}

/// `p ((p-1)/2)^{2/(2-alpha)} lambda^{2/(2-alpha)} E1`, with `E1` an estimate
/// of the variation at unit intensity.
pub fn lyapunov_prediction(model: &CovarianceModel, p: f64, e1: f64) -> Result<RatePrediction> {
    if !(p >= 1.0) {
        return Err(invalid(format!("moment order must be >= 1, got {p}")));
    }
    let k = model.lambda_exponent();
    let coefficient = if p == 1.0 || model.lambda == 0.0 {
        0.0
    } else {
        p * ((p - 1.0) / 2.0).powf(k) * model.lambda.powf(k) * e1
    };
    Ok(RatePrediction {
        time_exponent: time_rate_exponent(model),
        coefficient,
        order: p,
    })
}

/// `lambda^{2/(2-alpha)} E1`.
pub fn escaling(model: &CovarianceModel, e1: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(invalid(format!("lambda must be > 0, got {lambda}")));
    }
    Ok(lambda.powf(model.lambda_exponent()) * e1)
}

/// Moment growth rate under space-time white noise, `n(n^2-1) lambda^2 / 24`.
pub fn white_noise_rate(n: u32, lambda: f64) -> Result<f64> {
    if n == 0 {
        return Err(invalid("moment order must be >= 1"));
    }
    let n = n as f64;
    Ok(n * (n * n - 1.0) * lambda * lambda / 24.0)
}

/// Semigroup time `tau` and intensity factor `(p-1)/(q-1)` for which the
/// hypercontractive exponent `1 + e^{2 tau}(p-1)` equals `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypercontractMap {
    pub tau: f64,
    pub lambda_factor: f64,
}

pub fn hypercontract_map(p: f64, q: f64) -> Result<HypercontractMap> {
    if !(p > 1.0) {
        return Err(invalid(format!("p must exceed 1, got {p}")));
    }
    if !(q >= p) || !q.is_finite() {
        return Err(invalid(format!("q must satisfy q >= p, got p = {p}, q = {q}")));
    }
    let lambda_factor = (p - 1.0) / (q - 1.0);
    Ok(HypercontractMap { tau: -0.5 * lambda_factor.ln(), lambda_factor })
}

/// `q(tau) = 1 + e^{2 tau} (p - 1)`.
pub fn hypercontractive_exponent(p: f64, tau: f64) -> f64 {
    1.0 + (2.0 * tau).exp() * (p - 1.0)
}
