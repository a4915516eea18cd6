use nalgebra::{DMatrix, DVector};

use super::grid::SpaceTimeGrid;
use crate::error::{invalid, Error, Result};
use crate::model::CovarianceModel;
use crate::quadrature::{gauss_legendre_on, normal_cdf, normal_pdf};
use crate::toeplitz::cell_coords;

/// Highest chaos level accepted anywhere.
pub const MAX_LEVEL: usize = 5;

/// Default cap on the entries of one dense `D × D` matrix (`D = M_t N^d`).
pub const DEFAULT_DENSE_CAP: u64 = 8_000_000;

const TIME_NODES: usize = 24;

/// Which time-slice tuples carry coefficients.
///
/// `Strict` keeps only strictly increasing slices. `Weak` also admits
/// repeated slices: two noise cells in one slice stand for the half-square
/// `s_1 < s_2` of that slice, which is exactly half of their Wick product, so
/// the within-slice transition enters with weight ½. Dropping those pairs
/// biases every level `k ≥ 2` by `O(1/M_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SliceOrdering {
    Strict,
    #[default]
    Weak,
}

impl std::fmt::Display for SliceOrdering {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SliceOrdering::Strict => "strict",
            SliceOrdering::Weak => "weak",
        })
    }
}

impl std::str::FromStr for SliceOrdering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "strict" => Ok(SliceOrdering::Strict),
            "weak" => Ok(SliceOrdering::Weak),
            other => Err(invalid(format!("unknown slice ordering '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelOptions {
    pub ordering: SliceOrdering,
    /// Cap on the entries of one dense `D × D` matrix.
    pub dense_cap: u64,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self { ordering: SliceOrdering::Weak, dense_cap: DEFAULT_DENSE_CAP }
    }
}

/// Cell-averaged kernels of the truncated expansion.
///
/// The level-`k` coefficient of the tuple `a_1, …, a_k` (flat cell indices
/// `slice * N^d + cell`, slices ordered as set by [`SliceOrdering`]) is
/// `weight_k R(a_k) Q(a_k, a_{k-1}) ⋯ Q(a_2, a_1)` with `weight_k = λ^{k/2}`.
#[derive(Debug, Clone)]
pub struct ChaosSolution {
    grid: SpaceTimeGrid,
    lambda: f64,
    truncation: usize,
    ordering: SliceOrdering,
    weights: Vec<f64>,
    terminal: DVector<f64>,
    transition: DMatrix<f64>,
}

/// `(1/h) ∫_lo^hi p_v(x - y) dy` in one dimension, `s = √v`.
fn cell_average(x: f64, lo: f64, hi: f64, s: f64) -> f64 {
    let h = hi - lo;
    if s == 0.0 {
        return if x >= lo && x < hi { 1.0 / h } else { 0.0 };
    }
    // difference of upper tails is accurate on both sides of the cell
    let (a, b) = ((x - lo) / s, (x - hi) / s);
    let mass = if a + b > 0.0 { normal_cdf(-b) - normal_cdf(-a) } else { normal_cdf(a) - normal_cdf(b) };
    mass / h
}

/// Second antiderivative of the `N(0, s²)` density.
fn psi(w: f64, s: f64) -> f64 {
    w * normal_cdf(w / s) + s * normal_pdf(w / s)
}

/// `(1/h²) ∫_0^h ∫_u^{u+h} p_v(z - z') dz dz'`: transition between two cells
/// `u` apart, averaged over both.
fn pair_average(u: f64, h: f64, s: f64) -> f64 {
    let u = u.abs();
    if s == 0.0 {
        return (h - u).max(0.0) / (h * h);
    }
    let val = if u > h {
        // the linear part of psi cancels in the second difference; what is
        // left is the upper-tail term, evaluated without cancellation
        let g = |w: f64| {
            let z = w / s;
            s * (normal_pdf(z) - z * normal_cdf(-z))
        };
        g(u + h) - 2.0 * g(u) + g(u - h)
    } else {
        psi(u + h, s) - 2.0 * psi(u, s) + psi(u - h, s)
    };
    (val / (h * h)).max(0.0)
}

/// Nodes and weights for `(1/dt) ∫_{lo}^{lo+dt} f(v) dv`, with `v = lo + dt w²`
/// when the interval starts at 0 so that `f(√v)`-type behaviour is smooth.
fn interval_rule(lo: f64, dt: f64, weight: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
    if lo == 0.0 {
        gauss_legendre_on(TIME_NODES, 0.0, 1.0)
            .into_iter()
            .map(|(w, q)| {
                let v = dt * w * w;
                (v, 2.0 * w * q * weight(v))
            })
            .collect()
    } else {
        gauss_legendre_on(TIME_NODES, 0.0, 1.0)
            .into_iter()
            .map(|(w, q)| {
                let v = lo + dt * w;
                (v, q * weight(v))
            })
            .collect()
    }
}

/// Builds the level kernels for truncation `k`.
///
/// Refuses with [`Error::ResourceCap`] when one dense `D × D` matrix would hold
/// more than `options.dense_cap` entries.
pub fn build_kernels(grid: &SpaceTimeGrid, model: &CovarianceModel, k: usize, options: KernelOptions) -> Result<ChaosSolution> {
    let dense_cap = options.dense_cap;
    if k > MAX_LEVEL {
        return Err(invalid(format!("truncation K = {k} exceeds the supported maximum {MAX_LEVEL}")));
    }
    if grid.d() != model.d() {
        return Err(invalid("grid dimension does not match model"));
    }
    let size = grid.size() as u64;
    if size * size > dense_cap {
        return Err(Error::ResourceCap {
            what: format!("chaos kernels on {} space-time cells", size),
            needed: size * size,
            cap: dense_cap,
        });
    }
    let (m, n, d, cells) = (grid.m(), grid.n(), grid.d(), grid.cells());
    let (dt, h) = (grid.dt(), grid.dx());

    // terminal kernel: time average of the cell-averaged heat kernel at x
    let mut terminal = DVector::zeros(m * cells);
    let lowers: Vec<Vec<f64>> = (0..cells).map(|y| grid.cell_lower(y)).collect();
    for i in 0..m {
        let lo = (m - 1 - i) as f64 * dt;
        for (v, w) in interval_rule(lo, dt, |_| 1.0) {
            let s = v.sqrt();
            for (y, lower) in lowers.iter().enumerate() {
                let mut val = w;
                for (x, lo) in grid.x().iter().zip(lower) {
                    val *= cell_average(*x, *lo, lo + h, s);
                }
                terminal[i * cells + y] += val;
            }
        }
    }

    // transition kernels by slice gap: average over the triangular law of the
    // time difference of two uniform points in slices `g` apart
    let offsets = 2 * n - 1;
    let mut by_gap: Vec<Vec<f64>> = Vec::with_capacity(m);
    for g in 0..m {
        let nodes = if g == 0 {
            if options.ordering == SliceOrdering::Strict {
                by_gap.push(Vec::new());
                continue;
            }
            // gap density 2(dt - v)/dt² on [0, dt], times the ½ of the half-square
            interval_rule(0.0, dt, |v| (dt - v) / dt)
        } else {
            let lo = (g - 1) as f64 * dt;
            let mut nodes = interval_rule(lo, dt, |v| (v - lo) / dt);
            nodes.extend(interval_rule(g as f64 * dt, dt, |v| ((g + 1) as f64 * dt - v) / dt));
            nodes
        };
        let full = offsets.pow(d as u32);
        let mut table = vec![0.0; full];
        let mut per_axis = vec![0.0; offsets];
        for (v, w) in nodes {
            let s = v.sqrt();
            for (o, slot) in per_axis.iter_mut().enumerate() {
                *slot = pair_average((o as f64 - (n - 1) as f64) * h, h, s);
            }
            for (idx, t) in table.iter_mut().enumerate() {
                let mut val = w;
                for c in cell_coords(idx, offsets, d) {
                    val *= per_axis[c];
                }
                *t += val;
            }
        }
        by_gap.push(table);
    }
    let coords: Vec<Vec<usize>> = (0..cells).map(|y| cell_coords(y, n, d)).collect();
    let offset_index = |y: usize, z: usize| {
        coords[y]
            .iter()
            .zip(&coords[z])
            .fold(0, |acc, (&a, &b)| acc * offsets + (a + n - 1 - b))
    };
    let mut pair_index = vec![0usize; cells * cells];
    for y in 0..cells {
        for z in 0..cells {
            pair_index[y * cells + z] = offset_index(y, z);
        }
    }
    let mut transition = DMatrix::zeros(m * cells, m * cells);
    let first_gap = if options.ordering == SliceOrdering::Strict { 1 } else { 0 };
    for i in 0..m {
        for j in (0..=i).filter(|&j| i - j >= first_gap) {
            let table = &by_gap[i - j];
            for y in 0..cells {
                for z in 0..cells {
                    transition[(i * cells + y, j * cells + z)] = table[pair_index[y * cells + z]];
                }
            }
        }
    }

    let lambda = model.lambda();
    Ok(ChaosSolution {
        grid: grid.clone(),
        lambda,
        truncation: k,
        ordering: options.ordering,
        weights: (0..=k).map(|l| lambda.powf(l as f64 / 2.0)).collect(),
        terminal,
        transition,
    })
}

impl ChaosSolution {
    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    /// Intensity the coefficients correspond to.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn ordering(&self) -> SliceOrdering {
        self.ordering
    }

    pub fn level_weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn terminal(&self) -> &DVector<f64> {
        &self.terminal
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    /// Level-`k` coefficient of a tuple of flat cells listed in time order;
    /// zero unless the slices increase (strictly, under `Strict`).
    pub fn coefficient(&self, tuple: &[usize]) -> f64 {
        let k = tuple.len();
        if k > self.truncation {
            return 0.0;
        }
        if k == 0 {
            return self.weights[0];
        }
        let cells = self.grid.cells();
        let strict = self.ordering == SliceOrdering::Strict;
        if tuple.windows(2).any(|w| w[1] / cells < w[0] / cells || (strict && w[1] / cells == w[0] / cells)) {
            return 0.0;
        }
        let mut c = self.weights[k] * self.terminal[tuple[k - 1]];
        for w in tuple.windows(2) {
            c *= self.transition[(w[1], w[0])];
        }
        c
    }
}

/// Ornstein-Uhlenbeck action: level `k` scaled by `e^{-kτ}`.
pub fn mehler_action(sol: &ChaosSolution, tau: f64) -> Result<ChaosSolution> {
    if !(tau >= 0.0) {
        return Err(invalid(format!("tau must be nonnegative, got {tau}")));
    }
    let weights = sol
        .weights
        .iter()
        .enumerate()
        .map(|(k, w)| if k == 0 { *w } else { w * (-(k as f64) * tau).exp() })
        .collect();
    Ok(ChaosSolution { weights, lambda: sol.lambda * (-2.0 * tau).exp(), ..sol.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pair_average_matches_quadrature() {
        let (h, s) = (0.1, 0.07);
        for u in [0.0, 0.05, 0.1, 0.3, 0.6] {
            let n = 2000;
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let z = (i as f64 + 0.5) / n as f64 * h;
                    let zp = u + (j as f64 + 0.5) / n as f64 * h;
                    acc += normal_pdf((z - zp) / s) / s;
                }
            }
            acc /= (n * n) as f64;
            assert_relative_eq!(pair_average(u, h, s), acc, max_relative = 1e-5, epsilon = 1e-14);
        }
    }

    #[test]
    fn single_slice_terminal_mass() {
        let grid = SpaceTimeGrid::centred(0.5, 1, 40, 4.0, 1).unwrap();
        let model = CovarianceModel::delta(0.5, 1.0).unwrap();
        let sol = build_kernels(&grid, &model, 1, KernelOptions::default()).unwrap();
        let mass: f64 = sol.terminal().iter().sum::<f64>() * grid.dx();
        // box truncation: at most 2Φ(-4/√0.5) ≈ 1.5e-8 is lost
        assert!(mass < 1.0 && mass > 1.0 - 1.6e-8, "{mass}");
    }

    #[test]
    fn transition_rows_conserve_mass_in_wide_box() {
        let grid = SpaceTimeGrid::centred(0.2, 4, 60, 3.0, 1).unwrap();
        let model = CovarianceModel::delta(0.5, 1.0).unwrap();
        let sol = build_kernels(&grid, &model, 2, KernelOptions::default()).unwrap();
        let cells = grid.cells();
        let row = 3 * cells + 30;
        let mass: f64 = (0..cells).map(|z| sol.transition()[(row, cells + z)]).sum::<f64>() * grid.dx();
        assert_relative_eq!(mass, 1.0, max_relative = 1e-10);
        assert_eq!(sol.transition()[(cells + 3, 3 * cells + 5)], 0.0);
    }

    #[test]
    fn zero_truncation_is_constant_one() {
        let grid = SpaceTimeGrid::centred(0.5, 3, 4, 1.0, 1).unwrap();
        let model = CovarianceModel::delta(0.5, 2.0).unwrap();
        let sol = build_kernels(&grid, &model, 0, KernelOptions::default()).unwrap();
        assert_eq!(sol.coefficient(&[]), 1.0);
        assert_eq!(sol.coefficient(&[0]), 0.0);
    }

    #[test]
    fn coefficients_need_increasing_slices() {
        let grid = SpaceTimeGrid::centred(0.5, 3, 4, 1.0, 1).unwrap();
        let model = CovarianceModel::delta(0.5, 1.0).unwrap();
        let strict = KernelOptions { ordering: SliceOrdering::Strict, ..Default::default() };
        let sol = build_kernels(&grid, &model, 3, strict).unwrap();
        assert!(sol.coefficient(&[1, 5, 9]) > 0.0);
        assert_eq!(sol.coefficient(&[1, 2]), 0.0);
        assert_eq!(sol.coefficient(&[5, 1]), 0.0);
        let weak = build_kernels(&grid, &model, 3, KernelOptions::default()).unwrap();
        assert!(weak.coefficient(&[1, 2]) > 0.0);
        assert_eq!(weak.coefficient(&[5, 1]), 0.0);
        assert_eq!(weak.coefficient(&[1, 5, 9]), sol.coefficient(&[1, 5, 9]));
    }

    #[test]
    fn dense_cap_refuses() {
        let grid = SpaceTimeGrid::centred(0.5, 10, 40, 1.0, 1).unwrap();
        let model = CovarianceModel::delta(0.5, 1.0).unwrap();
        let err = build_kernels(&grid, &model, 3, KernelOptions { dense_cap: 1000, ..Default::default() }).unwrap_err();
        assert!(matches!(err, Error::ResourceCap { needed: 160_000, .. }));
    }

    #[test]
    fn mehler_limits() {
        let grid = SpaceTimeGrid::centred(0.5, 3, 4, 1.0, 1).unwrap();
        let model = CovarianceModel::delta(0.5, 1.5).unwrap();
        let sol = build_kernels(&grid, &model, 3, KernelOptions::default()).unwrap();
        assert_eq!(mehler_action(&sol, 0.0).unwrap().weights(), sol.weights());
        let far = mehler_action(&sol, 800.0).unwrap();
        assert_eq!(far.weights(), &[1.0, 0.0, 0.0, 0.0]);
    }
}
