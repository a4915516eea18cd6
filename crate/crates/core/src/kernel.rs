//! Covariance kernels of the driving noise and their exact cell integrals.
//!
//! The temporal kernel is always `|t|^{-alpha0}`. The spatial kernel is a tag
//! ([`SpatialKernel`]) carrying pointwise evaluation, cell-pair integrals,
//! ball averages and Gaussian expectations, so that integrating callers never
//! touch the singularity at the origin pointwise.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};

/// Offsets at or beyond this many cells use the asymptotic expansion of the
/// second difference, which avoids cancellation between large terms.
const FAR_FIELD_CELLS: i64 = 8;

/// `G(u) = |u|^{2-a} / ((1-a)(2-a))`, so that `G'' = |u|^{-a}`.
fn power_second_antiderivative(u: f64, a: f64) -> f64 {
    u.abs().powf(2.0 - a) / ((1.0 - a) * (2.0 - a))
}

/// `∫_0^h ∫_{mh}^{(m+1)h} |y - x|^{-a} dy dx` for `a < 1`.
pub fn power_cell_pair_integral(a: f64, h: f64, offset: i64) -> f64 {
    let m = offset.abs();
    if m >= FAR_FIELD_CELLS {
        // h^2 Σ_k 2 h^{2k-2} G^(2k)(u) / (2k)! at u = m h
        let u = m as f64 * h;
        let r = (h / u).powi(2);
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 2..12 {
            let j = 2.0 * k as f64;
            term *= (a + j - 4.0) * (a + j - 3.0) / ((j - 1.0) * j) * r;
            sum += term;
            if term.abs() < 1e-18 * sum {
                break;
            }
        }
        return h * h * u.powf(-a) * sum;
    }
    let m = m as f64;
    power_second_antiderivative((m + 1.0) * h, a) - 2.0 * power_second_antiderivative(m * h, a)
        + power_second_antiderivative((m - 1.0) * h, a)
}

/// Toeplitz row of the temporal cell matrix: entry `g` is
/// `∬ |s - r|^{-alpha0}` over two time cells of width `h` that are `g` cells apart.
pub fn temporal_cell_row(alpha0: f64, h: f64, cells: usize) -> Vec<f64> {
    (0..cells as i64)
        .map(|g| power_cell_pair_integral(alpha0, h, g))
        .collect()
}

/// Volume of the unit ball in `R^d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    let half = d as f64 / 2.0;
    PI.powf(half) / gamma(half + 1.0)
}

/// Spatial covariance kernel `gamma(x)`.
///
/// `Riesz` is `|x|^{-alpha}` and needs `alpha < d` to be locally integrable.
/// `Delta` is the Dirac mass in `d = 1`, which scales with exponent `alpha = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpatialKernel {
    #[default]
    Riesz,
    Delta,
}

impl fmt::Display for SpatialKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpatialKernel::Riesz => f.write_str("riesz"),
            SpatialKernel::Delta => f.write_str("delta"),
        }
    }
}

impl FromStr for SpatialKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "riesz" => Ok(SpatialKernel::Riesz),
            "delta" | "dirac" | "white" => Ok(SpatialKernel::Delta),
            other => Err(invalid(format!("unknown spatial kernel '{other}'"))),
        }
    }
}

impl SpatialKernel {
    /// Structural compatibility of the tag with `(alpha, d)`.
    pub fn check_shape(self, alpha: f64, d: usize) -> Result<()> {
        match self {
            SpatialKernel::Riesz => Ok(()),
            SpatialKernel::Delta if d == 1 && alpha == 1.0 => Ok(()),
            SpatialKernel::Delta => Err(invalid(format!(
                "delta kernel requires d = 1 and alpha = 1 (got d = {d}, alpha = {alpha})"
            ))),
        }
    }

    /// Local integrability, required by every integrating engine.
    pub fn check_integrable(self, alpha: f64, d: usize) -> Result<()> {
        match self {
            SpatialKernel::Riesz if alpha >= d as f64 => Err(invalid(format!(
                "riesz kernel needs alpha < d for local integrability (alpha = {alpha}, d = {d}); \
                 for alpha = d = 1 use kernel = delta"
            ))),
            _ => Ok(()),
        }
    }

    pub fn eval(self, alpha: f64, x: &[f64]) -> Result<f64> {
        let r = norm(x);
        if r == 0.0 {
            return Err(Error::Singularity(format!("{self} kernel at x = 0")));
        }
        Ok(match self {
            SpatialKernel::Riesz => r.powf(-alpha),
            SpatialKernel::Delta => 0.0,
        })
    }

    /// `∫_{cell} ∫_{cell + offset h} gamma(y - z) dz dy` for cubic cells of side `h`.
    ///
    /// Exact in `d = 1`; for the Riesz kernel in `d >= 2` the off-diagonal cells
    /// use the midpoint rule and the diagonal cell the average over a ball of
    /// the same volume.
    pub fn cell_pair_integral(self, alpha: f64, d: usize, h: f64, offset: &[i64]) -> f64 {
        debug_assert_eq!(offset.len(), d);
        match self {
            SpatialKernel::Delta => {
                if offset.iter().all(|&o| o == 0) {
                    h
                } else {
                    0.0
                }
            }
            SpatialKernel::Riesz if d == 1 => power_cell_pair_integral(alpha, h, offset[0]),
            SpatialKernel::Riesz => {
                let vol = h.powi(d as i32);
                if offset.iter().all(|&o| o == 0) {
                    let radius = (vol / unit_ball_volume(d)).powf(1.0 / d as f64);
                    vol * vol * self.ball_average(alpha, d, radius)
                } else {
                    let dist = offset
                        .iter()
                        .map(|&o| (o as f64 * h).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    vol * vol * dist.powf(-alpha)
                }
            }
        }
    }

    /// Mean of `gamma` over the ball of the given radius centered at 0.
    pub fn ball_average(self, alpha: f64, d: usize, radius: f64) -> f64 {
        match self {
            SpatialKernel::Riesz => d as f64 / (d as f64 - alpha) * radius.powf(-alpha),
            SpatialKernel::Delta => 1.0 / (unit_ball_volume(d) * radius.powi(d as i32)),
        }
    }

    /// `E gamma(Z)` for `Z ~ N(0, var I_d)`.
    pub fn gaussian_expectation(self, alpha: f64, d: usize, var: f64) -> f64 {
        match self {
            SpatialKernel::Riesz => {
                let half_d = d as f64 / 2.0;
                (2.0 * var).powf(-alpha / 2.0) * gamma(half_d - alpha / 2.0) / gamma(half_d)
            }
            SpatialKernel::Delta => (2.0 * PI * var).powf(-(d as f64) / 2.0),
        }
    }

    /// Kernel value used for a discretized pair of path positions whose
    /// conditional-mean displacement is `disp` and whose conditional
    /// displacement variance is `var`.
    ///
    /// Riesz: pointwise at `disp`, replaced by the ball average of radius
    /// `floor` when `|disp| < floor`. Delta: the Gaussian density of the
    /// displacement at 0.
    pub fn smoothed_value(self, alpha: f64, d: usize, disp: &[f64], var: f64, floor: f64) -> f64 {
        match self {
            SpatialKernel::Riesz => {
                let r = norm(disp);
                if r < floor {
                    self.ball_average(alpha, d, floor)
                } else {
                    r.powf(-alpha)
                }
            }
            SpatialKernel::Delta => {
                if var <= 0.0 {
                    return if norm(disp) < floor {
                        self.ball_average(alpha, d, floor)
                    } else {
                        0.0
                    };
                }
                let r2: f64 = disp.iter().map(|v| v * v).sum();
                let z = r2 / (2.0 * var);
                if z > 40.0 {
                    0.0
                } else {
                    (-z).exp() * (2.0 * PI * var).powf(-(d as f64) / 2.0)
                }
            }
        }
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
