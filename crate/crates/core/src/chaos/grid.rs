use crate::error::{invalid, Result};
use crate::toeplitz::cell_coords;

/// Uniform time slices of `[0, t]` and cubic cells of `[-L, L]^d`, with the
/// point `x` at which the solution is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeGrid {
    t: f64,
    m: usize,
    n: usize,
    d: usize,
    half_width: f64,
    x: Vec<f64>,
}

impl SpaceTimeGrid {
    pub fn new(t: f64, m: usize, n: usize, half_width: f64, x: Vec<f64>) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(invalid(format!("horizon must be positive, got {t}")));
        }
        if m == 0 || n < 2 || x.is_empty() {
            return Err(invalid(format!("grid needs M_t >= 1, N >= 2, d >= 1 (M_t = {m}, N = {n})")));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(invalid(format!("box half-width must be positive, got {half_width}")));
        }
        if x.iter().any(|c| !(c.abs() < half_width)) {
            return Err(invalid("evaluation point lies outside the box"));
        }
        // x must sit on a cell face or a cell centre along every axis
        let dx = 2.0 * half_width / n as f64;
        for c in &x {
            let u = 2.0 * (c + half_width) / dx;
            if (u - u.round()).abs() > 1e-9 * u.max(1.0) {
                return Err(invalid(format!("evaluation point coordinate {c} is not grid-aligned")));
            }
        }
        let d = x.len();
        Ok(Self { t, m, n, d, half_width, x })
    }

    /// Grid centred on the origin, evaluated at `x = 0`.
    pub fn centred(t: f64, m: usize, n: usize, half_width: f64, d: usize) -> Result<Self> {
        Self::new(t, m, n, half_width, vec![0.0; d.max(1)])
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn dt(&self) -> f64 {
        self.t / self.m as f64
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn cells(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// Number of space-time cells, `M_t N^d`.
    pub fn size(&self) -> usize {
        self.m * self.cells()
    }

    /// Lower corner of spatial cell `y` along each axis.
    pub fn cell_lower(&self, y: usize) -> Vec<f64> {
        let dx = self.dx();
        cell_coords(y, self.n, self.d)
            .iter()
            .map(|&c| -self.half_width + c as f64 * dx)
            .collect()
    }
}
