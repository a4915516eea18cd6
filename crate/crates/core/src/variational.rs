//! The space-time variational constant.
//!
//! The functional
//!
//! ```text
//! F(g) = λ ∫∫ |s-r|^{-α0} ∫∫ γ(x-y) g²(s,x) g²(r,y) dx dy ds dr - ½ ∫∫ |∇_x g(s,x)|² dx ds
//! ```
//!
//! is discretized with `g` piecewise constant on `M` time slices of `[0, 1]`
//! and `N^d` cubic cells of the box `[-L, L]^d`, zero outside the box. Kernel
//! factors are exact cell-pair integrals, and the gradient energy uses the
//! nearest-neighbour differences across every cell face, including the faces
//! on the box boundary. Each slice is normalized by `∫ g²(s, x) dx = 1`.
//!
//! The supremum is approached by projected gradient ascent in the discrete
//! `H¹` metric. The length scale of that metric is tied to the box, so with the
//! default box (a fixed multiple of the best Gaussian width) the whole
//! discretization is covariant under the dilations that generate the
//! `λ^{2/(2-α)}` scaling.

use log::warn;

use crate::error::{invalid, Error, Result};
use crate::kernel::temporal_cell_row;
use crate::model::CovarianceModel;
use crate::quadrature::golden_section_max;
use crate::toeplitz::{cell_coords, OffsetOperator};

/// Candidate `g(s, x)` on a space-time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    m: usize,
    n: usize,
    d: usize,
    half_width: f64,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(m: usize, n: usize, d: usize, half_width: f64, values: Vec<f64>) -> Result<Self> {
        if m == 0 || n < 2 || d == 0 {
            return Err(invalid(format!("grid needs m >= 1, n >= 2, d >= 1 (m = {m}, n = {n}, d = {d})")));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(invalid(format!("box half-width must be positive, got {half_width}")));
        }
        if values.len() != m * n.pow(d as u32) {
            return Err(invalid("value array does not match grid shape"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid function has non-finite values".into()));
        }
        Ok(Self { m, n, d, half_width, values })
    }

    pub fn from_fn(
        m: usize,
        n: usize,
        d: usize,
        half_width: f64,
        f: impl Fn(f64, &[f64]) -> f64,
    ) -> Result<Self> {
        let cells = n.pow(d as u32);
        let dx = 2.0 * half_width / n as f64;
        let mut values = Vec::with_capacity(m * cells);
        for i in 0..m {
            let s = (i as f64 + 0.5) / m as f64;
            for y in 0..cells {
                let x: Vec<f64> = cell_coords(y, n, d)
                    .iter()
                    .map(|&c| -half_width + (c as f64 + 0.5) * dx)
                    .collect();
                values.push(f(s, &x));
            }
        }
        Self::new(m, n, d, half_width, values)
    }

    /// Time-constant profile with `g²` proportional to the `N(0, σ² I)` density.
    pub fn gaussian(m: usize, n: usize, d: usize, half_width: f64, sigma: f64) -> Result<Self> {
        Self::from_fn(m, n, d, half_width, |_, x| {
            (-x.iter().map(|v| v * v).sum::<f64>() / (4.0 * sigma * sigma)).exp()
        })
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

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cells(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.m as f64
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.d as i32)
    }

    pub fn slice(&self, i: usize) -> &[f64] {
        let c = self.cells();
        &self.values[i * c..(i + 1) * c]
    }

    /// `Σ g²(s_i, ·) · cell volume` per slice.
    pub fn slice_masses(&self) -> Vec<f64> {
        let vol = self.cell_volume();
        (0..self.m)
            .map(|i| self.slice(i).iter().map(|v| v * v).sum::<f64>() * vol)
            .collect()
    }

    /// `x -> -x` in every coordinate.
    pub fn reflect(&self) -> Self {
        let cells = self.cells();
        let mut values = vec![0.0; self.values.len()];
        for y in 0..cells {
            let coords = cell_coords(y, self.n, self.d);
            let ry = coords.iter().fold(0, |acc, &c| acc * self.n + (self.n - 1 - c));
            for i in 0..self.m {
                values[i * cells + ry] = self.values[i * cells + y];
            }
        }
        Self { values, ..self.clone() }
    }

    /// Largest per-slice share of `g²` mass in cells whose centre lies outside
    /// `[-0.8 L, 0.8 L]^d`.
    pub fn boundary_mass(&self) -> f64 {
        let cells = self.cells();
        let dx = self.dx();
        let outer: Vec<bool> = (0..cells)
            .map(|y| {
                cell_coords(y, self.n, self.d)
                    .iter()
                    .any(|&c| (-self.half_width + (c as f64 + 0.5) * dx).abs() > 0.8 * self.half_width)
            })
            .collect();
        (0..self.m)
            .map(|i| {
                let s = self.slice(i);
                let total: f64 = s.iter().map(|v| v * v).sum();
                let edge: f64 = s.iter().zip(&outer).filter(|(_, &o)| o).map(|(v, _)| v * v).sum();
                if total > 0.0 {
                    edge / total
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Rescales each slice to unit `L²` mass.
pub fn project(g: &GridFunction) -> Result<GridFunction> {
    let masses = g.slice_masses();
    let cells = g.cells();
    let mut values = g.values.clone();
    for (i, mass) in masses.iter().enumerate() {
        if !(*mass > 0.0) || !mass.is_finite() {
            return Err(Error::Degenerate(format!("time slice {i} has zero or non-finite mass")));
        }
        let scale = mass.sqrt().recip();
        for v in &mut values[i * cells..(i + 1) * cells] {
            *v *= scale;
        }
    }
    Ok(GridFunction { values, ..g.clone() })
}

/// Discretized functional with its kernel operators precomputed for one grid.
#[derive(Debug, Clone)]
pub struct Functional {
    lambda: f64,
    m: usize,
    d: usize,
    n: usize,
    dt: f64,
    dx: f64,
    temporal: Vec<f64>,
    spatial: OffsetOperator,
}

impl Functional {
    pub fn new(model: &CovarianceModel, m: usize, n: usize, half_width: f64) -> Result<Self> {
        model.require_integrable()?;
        let d = model.d();
        let dt = 1.0 / m as f64;
        let dx = 2.0 * half_width / n as f64;
        let kernel = model.kernel();
        let alpha = model.alpha();
        let spatial = OffsetOperator::from_fn(d, n, |o| kernel.cell_pair_integral(alpha, d, dx, o));
        Ok(Self {
            lambda: model.lambda(),
            m,
            d,
            n,
            dt,
            dx,
            temporal: temporal_cell_row(model.alpha0(), dt, m),
            spatial,
        })
    }

    pub fn for_grid(model: &CovarianceModel, g: &GridFunction) -> Result<Self> {
        if g.d != model.d() {
            return Err(invalid("grid dimension does not match model"));
        }
        Self::new(model, g.m, g.n, g.half_width)
    }

    fn check(&self, g: &GridFunction) {
        assert!(g.m == self.m && g.n == self.n && g.d == self.d, "grid shape mismatch");
    }

    /// `Ψ_i = Σ_j T_{|i-j|} S (g_j²)`, the interaction potential felt by slice `i`.
    fn potential(&self, g: &GridFunction) -> Vec<f64> {
        let cells = g.cells();
        let mut phi = vec![0.0; self.m * cells];
        let mut sq = vec![0.0; cells];
        for j in 0..self.m {
            for (s, v) in sq.iter_mut().zip(g.slice(j)) {
                *s = v * v;
            }
            self.spatial.apply(&sq, &mut phi[j * cells..(j + 1) * cells]);
        }
        let mut psi = vec![0.0; self.m * cells];
        for i in 0..self.m {
            let out = &mut psi[i * cells..(i + 1) * cells];
            for j in 0..self.m {
                let w = self.temporal[i.abs_diff(j)];
                for (o, p) in out.iter_mut().zip(&phi[j * cells..(j + 1) * cells]) {
                    *o += w * p;
                }
            }
        }
        psi
    }

    /// `Σ_ij T_ij Σ_kl S_kl g²_ik g²_jl`, without the `λ` factor.
    pub fn raw_interaction(&self, g: &GridFunction) -> f64 {
        self.check(g);
        let psi = self.potential(g);
        g.values.iter().zip(&psi).map(|(v, p)| v * v * p).sum()
    }

    pub fn interaction(&self, g: &GridFunction) -> f64 {
        if self.lambda == 0.0 {
            return 0.0;
        }
        self.lambda * self.raw_interaction(g)
    }

    pub fn kinetic(&self, g: &GridFunction) -> f64 {
        self.check(g);
        kinetic_term(g)
    }

    pub fn value(&self, g: &GridFunction) -> f64 {
        self.interaction(g) - self.kinetic(g)
    }

    /// Value and Euclidean gradient with respect to the grid values.
    pub fn value_and_gradient(&self, g: &GridFunction) -> (f64, Vec<f64>) {
        self.check(g);
        let psi = self.potential(g);
        let interaction: f64 =
            self.lambda * g.values.iter().zip(&psi).map(|(v, p)| v * v * p).sum::<f64>();
        let mut grad: Vec<f64> = g
            .values
            .iter()
            .zip(&psi)
            .map(|(v, p)| 4.0 * self.lambda * v * p)
            .collect();
        let lap = laplacian_sum(g);
        let kscale = self.dt * self.dx.powi(self.d as i32 - 2);
        for (gr, l) in grad.iter_mut().zip(&lap) {
            *gr -= kscale * l;
        }
        (interaction - kinetic_term(g), grad)
    }
}

/// `Σ_axes (2 g_y - g_{y+e} - g_{y-e})` with zero outside the box.
fn laplacian_sum(g: &GridFunction) -> Vec<f64> {
    let cells = g.cells();
    let n = g.n;
    let mut out = vec![0.0; g.values.len()];
    for i in 0..g.m {
        let s = g.slice(i);
        let o = &mut out[i * cells..(i + 1) * cells];
        for axis in 0..g.d {
            let stride = n.pow((g.d - 1 - axis) as u32);
            for y in 0..cells {
                let c = (y / stride) % n;
                let left = if c > 0 { s[y - stride] } else { 0.0 };
                let right = if c + 1 < n { s[y + stride] } else { 0.0 };
                o[y] += 2.0 * s[y] - left - right;
            }
        }
    }
    out
}

/// `½ Σ_slices dt Σ_faces (Δg)² dx^{d-2}`, counting the faces on the box
/// boundary against the zero extension.
pub fn kinetic_term(g: &GridFunction) -> f64 {
    let cells = g.cells();
    let n = g.n;
    let mut acc = 0.0;
    for i in 0..g.m {
        let s = g.slice(i);
        for axis in 0..g.d {
            let stride = n.pow((g.d - 1 - axis) as u32);
            for y in 0..cells {
                let c = (y / stride) % n;
                let left = if c > 0 { s[y - stride] } else { 0.0 };
                acc += (s[y] - left).powi(2);
                if c + 1 == n {
                    acc += s[y] * s[y];
                }
            }
        }
    }
    0.5 * g.dt() * g.dx().powi(g.d as i32 - 2) * acc
}

/// `λ Σ T Σ S g² g²`: the discretized interaction integral.
pub fn interaction_term(g: &GridFunction, model: &CovarianceModel) -> Result<f64> {
    Ok(Functional::for_grid(model, g)?.interaction(g))
}

/// Applies `c^{d-1} Π_axes (c + A_axis)^{-1}` slice by slice, where `A_axis`
/// is the Dirichlet second difference divided by `dx²` along one axis.
fn precondition(g: &GridFunction, r: &mut [f64], c: f64) {
    let cells = g.cells();
    let n = g.n;
    let h2 = g.dx() * g.dx();
    let diag = c + 2.0 / h2;
    let off = -1.0 / h2;
    let mut line = vec![0.0; n];
    let mut cp = vec![0.0; n];
    for i in 0..g.m {
        let s = &mut r[i * cells..(i + 1) * cells];
        for axis in 0..g.d {
            let stride = n.pow((g.d - 1 - axis) as u32);
            for start in (0..cells).filter(|y| (y / stride).is_multiple_of(n)) {
                for (k, l) in line.iter_mut().enumerate() {
                    *l = s[start + k * stride];
                }
                // Thomas algorithm, constant coefficients
                cp[0] = off / diag;
                line[0] /= diag;
                for k in 1..n {
                    let denom = diag - off * cp[k - 1];
                    cp[k] = off / denom;
                    line[k] = (line[k] - off * line[k - 1]) / denom;
                }
                for k in (0..n - 1).rev() {
                    line[k] -= cp[k] * line[k + 1];
                }
                for (k, l) in line.iter().enumerate() {
                    s[start + k * stride] = *l;
                }
            }
        }
        if g.d > 1 {
            let scale = c.powi(g.d as i32 - 1);
            s.iter_mut().for_each(|v| *v *= scale);
        }
    }
}

/// Preconditioned gradient with, per slice, the multiple of `P g` removed that
/// makes it tangent to the unit-mass constraint.
fn tangent_direction(g: &GridFunction, grad: &[f64], measure: f64, metric: f64) -> Vec<f64> {
    let mut dir: Vec<f64> = grad.iter().map(|v| v / measure).collect();
    precondition(g, &mut dir, metric);
    let mut pg = g.values.clone();
    precondition(g, &mut pg, metric);
    let cells = g.cells();
    for i in 0..g.m {
        let range = i * cells..(i + 1) * cells;
        let gs = &g.values[range.clone()];
        let along: f64 = gs.iter().zip(&dir[range.clone()]).map(|(a, b)| a * b).sum();
        let norm: f64 = gs.iter().zip(&pg[range.clone()]).map(|(a, b)| a * b).sum();
        let mu = along / norm;
        for (dv, p) in dir[range.clone()].iter_mut().zip(&pg[range]) {
            *dv -= mu * p;
        }
    }
    dir
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentConfig {
    /// Initial step in the preconditioned metric; adapted during the run.
    pub step: f64,
    pub max_iter: usize,
    /// Relative improvement below which an unreduced step ends the run.
    pub tol: f64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self { step: 0.5, max_iter: 5000, tol: 1e-11 }
    }
}

#[derive(Debug, Clone)]
pub struct VariationalResult {
    pub value: f64,
    pub interaction: f64,
    pub kinetic: f64,
    pub maximizer: GridFunction,
    /// Functional value of every accepted iterate, starting with the initializer.
    pub history: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub boundary_mass: f64,
}

const STEP_GROWTH: f64 = 1.3;
const MIN_STEP: f64 = 1e-14;
const BOUNDARY_MASS_WARN: f64 = 1e-3;

/// Projected gradient ascent on `interaction - kinetic` from `g0`.
pub fn ascend(g0: &GridFunction, model: &CovarianceModel, config: &AscentConfig) -> Result<VariationalResult> {
    if !(config.step > 0.0) || !(config.tol >= 0.0) {
        return Err(invalid("ascent needs step > 0 and tol >= 0"));
    }
    let functional = Functional::for_grid(model, g0)?;
    let mut g = project(g0)?;
    let measure = g.dt() * g.cell_volume();
    let metric = (4.0 / g.half_width).powi(2);
    let (mut value, mut grad) = functional.value_and_gradient(&g);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("initial functional value {value}")));
    }
    let mut history = vec![value];
    let mut step = config.step;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iter {
        iterations += 1;
        let dir = tangent_direction(&g, &grad, measure, metric);

        let mut reduced = false;
        let accepted = loop {
            let moved: Vec<f64> = g.values.iter().zip(&dir).map(|(v, d)| v + step * d).collect();
            let cand = project(&GridFunction { values: moved, ..g.clone() })?;
            let (cv, cg) = functional.value_and_gradient(&cand);
            if !cv.is_finite() {
                return Err(Error::NonFinite(format!("functional value {cv} at iteration {iterations}")));
            }
            if cv >= value {
                break Some((cand, cv, cg));
            }
            step *= 0.5;
            reduced = true;
            if step < MIN_STEP * config.step {
                break None;
            }
        };
        let Some((cand, cv, cg)) = accepted else {
            converged = true;
            break;
        };
        let gain = cv - value;
        if !reduced && gain <= config.tol * value.abs().max(f64::MIN_POSITIVE) {
            // equal within tolerance: keep the earlier iterate
            converged = true;
            break;
        }
        g = cand;
        value = cv;
        grad = cg;
        history.push(value);
        if !reduced {
            step *= STEP_GROWTH;
        }
    }

    let boundary_mass = g.boundary_mass();
    if boundary_mass > BOUNDARY_MASS_WARN {
        warn!(
            "maximizer puts {:.2e} of its mass near the box boundary (L = {}); consider a larger box",
            boundary_mass, g.half_width
        );
    }
    Ok(VariationalResult {
        value,
        interaction: functional.interaction(&g),
        kinetic: functional.kinetic(&g),
        maximizer: g,
        history,
        converged,
        iterations,
        boundary_mass,
    })
}

/// `∬_{[0,1]²} |s - r|^{-α0} ds dr`.
pub fn unit_square_temporal_mass(alpha0: f64) -> f64 {
    2.0 / ((1.0 - alpha0) * (2.0 - alpha0))
}

/// Continuum functional at the time-constant profile with `g²` the
/// `N(0, σ² I_d)` density.
pub fn trial_bound(model: &CovarianceModel, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    model.require_integrable()?;
    let d = model.d();
    let kinetic = d as f64 / (8.0 * sigma * sigma);
    if model.lambda() == 0.0 {
        return Ok(-kinetic);
    }
    let pair = model
        .kernel()
        .gaussian_expectation(model.alpha(), d, 2.0 * sigma * sigma);
    Ok(model.lambda() * unit_square_temporal_mass(model.alpha0()) * pair - kinetic)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOptimum {
    pub sigma: f64,
    pub value: f64,
}

/// Golden-section maximization of [`trial_bound`] over `log σ`.
pub fn best_trial(model: &CovarianceModel) -> Result<TrialOptimum> {
    model.require_integrable()?;
    if model.lambda() == 0.0 {
        return Err(Error::Degenerate("no finite optimal width at lambda = 0".into()));
    }
    let f = |ls: f64| trial_bound(model, ls.exp()).unwrap_or(f64::NEG_INFINITY);
    let (ls, value) = golden_section_max(f, (1e-8f64).ln(), (1e8f64).ln(), 1e-12);
    Ok(TrialOptimum { sigma: ls.exp(), value })
}

/// Resolution and solver settings for a full solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariationalConfig {
    pub m: usize,
    pub n: usize,
    /// Box half-width; `None` picks `BOX_WIDTHS` times the best Gaussian width.
    pub half_width: Option<f64>,
    pub ascent: AscentConfig,
}

impl Default for VariationalConfig {
    fn default() -> Self {
        Self { m: 64, n: 64, half_width: None, ascent: AscentConfig::default() }
    }
}

/// Default box half-width in units of the best Gaussian width.
pub const BOX_WIDTHS: f64 = 6.0;

/// Solves from the time-constant Gaussian initializer.
pub fn solve(model: &CovarianceModel, config: &VariationalConfig) -> Result<VariationalResult> {
    model.require_integrable()?;
    let (half_width, sigma) = match (config.half_width, best_trial(model)) {
        (Some(l), Ok(t)) => (l, t.sigma.min(l / 3.0)),
        (Some(l), Err(_)) => (l, l / 4.0),
        (None, Ok(t)) => (BOX_WIDTHS * t.sigma, t.sigma),
        (None, Err(_)) => (1.0, 0.25),
    };
    let g0 = GridFunction::gaussian(config.m, config.n, model.d(), half_width, sigma)?;
    ascend(&g0, model, &config.ascent)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub lambda: f64,
    pub value: f64,
    pub iterations: usize,
    /// `|Ê(λ)/Ê(1) - λ^{2/(2-α)}| / λ^{2/(2-α)}`.
    pub residual: f64,
}

/// Solves at each intensity and compares against the `λ^{2/(2-α)}` law.
pub fn scaling_check(model: &CovarianceModel, lambdas: &[f64], config: &VariationalConfig) -> Result<Vec<ScalingRow>> {
    if lambdas.iter().any(|&l| !(l > 0.0)) {
        return Err(invalid("scaling check needs positive intensities"));
    }
    let mut rows = Vec::with_capacity(lambdas.len());
    let mut e1 = None;
    for &lambda in lambdas {
        let res = solve(&model.with_lambda(lambda)?, config)?;
        if lambda == 1.0 {
            e1 = Some(res.value);
        }
        rows.push((lambda, res.value, res.iterations));
    }
    let e1 = match e1 {
        Some(v) => v,
        None => solve(&model.with_lambda(1.0)?, config)?.value,
    };
    let k = model.lambda_exponent();
    Ok(rows
        .into_iter()
        .map(|(lambda, value, iterations)| {
            let law = lambda.powf(k);
            ScalingRow { lambda, value, iterations, residual: (value / e1 - law).abs() / law }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn delta(lambda: f64) -> CovarianceModel {
        CovarianceModel::delta(0.5, lambda).unwrap()
    }

    #[test]
    fn kinetic_of_ramp_by_hand() {
        // dx = 1, dt = 1: faces (0-1),(1-2),(2-3),(3-4),(4-0) squared = 1+1+1+1+16
        let g = GridFunction::new(1, 4, 1, 2.0, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(kinetic_term(&g), 10.0);
        // dx = 0.5 scales the 1D energy by 1/dx
        let g = GridFunction::new(2, 4, 1, 1.0, vec![1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(kinetic_term(&g), 0.5 * 0.5 * 2.0 * 20.0 * 2.0);
    }

    #[test]
    fn kinetic_zero_for_zero_and_interior_constant_has_only_edge_faces() {
        let g = GridFunction::new(1, 6, 1, 3.0, vec![0.0, 1.0, 1.0, 1.0, 1.0, 0.0]).unwrap();
        // interior plateau: only the two ramps at its ends contribute
        assert_eq!(kinetic_term(&g), 0.5 * 2.0);
    }

    #[test]
    fn kinetic_second_order_convergence() {
        // smooth compactly supported bump: ½∫ g'² for g = cos²(πx/2) on [-1,1]
        let exact = 0.5 * std::f64::consts::PI.powi(2) / 4.0;
        let energy = |n: usize| {
            let g = GridFunction::from_fn(1, n, 1, 1.0, |_, x| (std::f64::consts::FRAC_PI_2 * x[0]).cos().powi(2))
                .unwrap();
            kinetic_term(&g)
        };
        let e1 = (energy(64) - exact).abs();
        let e2 = (energy(128) - exact).abs();
        let ratio = e1 / e2;
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn projection_normalizes_and_is_scale_invariant() {
        let g = GridFunction::from_fn(3, 16, 1, 2.0, |s, x| 1.0 + s + x[0].sin().abs()).unwrap();
        let p = project(&g).unwrap();
        for m in p.slice_masses() {
            assert!((m - 1.0).abs() < 1e-12);
        }
        let scaled = GridFunction::new(3, 16, 1, 2.0, g.values().iter().map(|v| 7.0 * v).collect()).unwrap();
        let ps = project(&scaled).unwrap();
        for (a, b) in p.values().iter().zip(ps.values()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-14);
        }
        assert_eq!(project(&p).unwrap().values().len(), p.values().len());
        let zero = GridFunction::new(1, 4, 1, 1.0, vec![0.0; 4]).unwrap();
        assert!(matches!(project(&zero), Err(Error::Degenerate(_))));
    }

    #[test]
    fn interaction_zero_at_zero_intensity() {
        let g = project(&GridFunction::gaussian(4, 16, 1, 2.0, 0.4).unwrap()).unwrap();
        assert_eq!(interaction_term(&g, &delta(0.0)).unwrap(), 0.0);
    }

    #[test]
    fn time_constant_interaction_uses_unit_square_mass() {
        // With g constant in time the temporal factor sums to 8/3 at alpha0 = 1/2.
        let g = project(&GridFunction::gaussian(8, 32, 1, 2.0, 0.4).unwrap()).unwrap();
        let inter = interaction_term(&g, &delta(1.0)).unwrap();
        let dx = g.dx();
        let spatial: f64 = g.slice(0).iter().map(|v| v.powi(4) * dx).sum();
        assert_relative_eq!(inter, 8.0 / 3.0 * spatial, max_relative = 1e-12);
    }

    #[test]
    fn interaction_linear_in_lambda_kinetic_independent() {
        let g = project(&GridFunction::from_fn(4, 24, 1, 2.0, |s, x| (-(x[0] - s).powi(2)).exp()).unwrap()).unwrap();
        let m = CovarianceModel::riesz(0.3, 0.6, 1, 1.0).unwrap();
        let a = interaction_term(&g, &m).unwrap();
        let b = interaction_term(&g, &m.with_lambda(2.5).unwrap()).unwrap();
        assert_relative_eq!(b, 2.5 * a, max_relative = 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = CovarianceModel::riesz(0.4, 0.5, 1, 1.3).unwrap();
        let g = GridFunction::from_fn(3, 10, 1, 1.5, |s, x| 1.0 + 0.3 * s + (-x[0] * x[0]).exp()).unwrap();
        let f = Functional::for_grid(&m, &g).unwrap();
        let (_, grad) = f.value_and_gradient(&g);
        let h = 1e-6;
        for idx in [0, 7, 15, 29] {
            let mut up = g.values().to_vec();
            up[idx] += h;
            let mut dn = g.values().to_vec();
            dn[idx] -= h;
            let fu = f.value(&GridFunction::new(3, 10, 1, 1.5, up).unwrap());
            let fd = f.value(&GridFunction::new(3, 10, 1, 1.5, dn).unwrap());
            assert_relative_eq!(grad[idx], (fu - fd) / (2.0 * h), max_relative = 1e-6);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_in_two_dimensions() {
        let m = CovarianceModel::riesz(0.5, 1.0, 2, 0.8).unwrap();
        let g = GridFunction::from_fn(2, 5, 2, 1.0, |s, x| 1.0 + s * x[0] + 0.5 * (-x[1] * x[1]).exp()).unwrap();
        let f = Functional::for_grid(&m, &g).unwrap();
        let (_, grad) = f.value_and_gradient(&g);
        let h = 1e-6;
        for idx in [0, 6, 12, 31, 49] {
            let mut up = g.values().to_vec();
            up[idx] += h;
            let mut dn = g.values().to_vec();
            dn[idx] -= h;
            let fu = f.value(&GridFunction::new(2, 5, 2, 1.0, up).unwrap());
            let fd = f.value(&GridFunction::new(2, 5, 2, 1.0, dn).unwrap());
            assert_relative_eq!(grad[idx], (fu - fd) / (2.0 * h), max_relative = 1e-6);
        }
    }

    #[test]
    fn trial_bound_at_zero_intensity() {
        for sigma in [0.2, 1.0, 3.0] {
            assert_relative_eq!(trial_bound(&delta(0.0), sigma).unwrap(), -1.0 / (8.0 * sigma * sigma));
        }
    }

    /// Quadrature oracle for the continuum functional at a Gaussian profile.
    fn trial_by_quadrature(model: &CovarianceModel, sigma: f64) -> f64 {
        let n = 4000;
        let hi = 10.0 * sigma;
        let h = 2.0 * hi / n as f64;
        let xs: Vec<f64> = (0..n).map(|i| -hi + (i as f64 + 0.5) * h).collect();
        let dens = |x: f64| (-x * x / (2.0 * sigma * sigma)).exp() / (2.0 * std::f64::consts::PI).sqrt() / sigma;
        let g = |x: f64| dens(x).sqrt();
        let gp = |x: f64| -x / (2.0 * sigma * sigma) * g(x);
        let kinetic: f64 = 0.5 * xs.iter().map(|&x| gp(x).powi(2) * h).sum::<f64>();
        let spatial = match model.kernel() {
            crate::kernel::SpatialKernel::Delta => xs.iter().map(|&x| dens(x).powi(2) * h).sum::<f64>(),
            crate::kernel::SpatialKernel::Riesz => {
                // exact cell integrals of |x-y|^{-α} against the density sampled at centres
                let a = model.alpha();
                let mut acc = 0.0;
                for (i, &x) in xs.iter().enumerate() {
                    for (j, &y) in xs.iter().enumerate().step_by(1) {
                        let w = crate::kernel::power_cell_pair_integral(a, h, i as i64 - j as i64);
                        acc += dens(x) * dens(y) * w;
                    }
                }
                acc
            }
        };
        model.lambda() * unit_square_temporal_mass(model.alpha0()) * spatial - kinetic
    }

    #[test]
    fn trial_bound_matches_quadrature() {
        let m = delta(1.0);
        assert_relative_eq!(trial_bound(&m, 0.3).unwrap(), trial_by_quadrature(&m, 0.3), max_relative = 1e-6);
        let r = CovarianceModel::riesz(0.5, 0.5, 1, 1.0).unwrap();
        assert_relative_eq!(trial_bound(&r, 0.7).unwrap(), trial_by_quadrature(&r, 0.7), max_relative = 1e-3);
    }

    #[test]
    fn best_trial_matches_analytic_optimum() {
        // F(σ) = A σ^{-α} - B σ^{-2} peaks at σ = (2B/(αA))^{1/(2-α)}
        let m = delta(1.0);
        let a = unit_square_temporal_mass(0.5) / (2.0 * std::f64::consts::PI.sqrt());
        let b = 1.0 / 8.0;
        let sigma = (2.0 * b / a).powf(1.0);
        let t = best_trial(&m).unwrap();
        assert_relative_eq!(t.sigma, sigma, max_relative = 1e-5);
        assert_relative_eq!(t.value, a / sigma - b / (sigma * sigma), max_relative = 1e-10);
    }

    #[test]
    fn trial_value_scales_with_intensity() {
        let one = best_trial(&delta(1.0)).unwrap().value;
        let two = best_trial(&delta(2.0)).unwrap().value;
        assert_relative_eq!(two, 4.0 * one, max_relative = 1e-9);
    }

    fn small_config() -> VariationalConfig {
        VariationalConfig { m: 12, n: 32, half_width: None, ascent: AscentConfig::default() }
    }

    #[test]
    fn ascent_history_nondecreasing_and_beats_trial() {
        let m = delta(1.0);
        let res = solve(&m, &small_config()).unwrap();
        assert!(res.history.windows(2).all(|w| w[1] >= w[0]));
        assert!(res.converged);
        assert!(res.value >= best_trial(&m).unwrap().value - 1e-6);
        for sigma in [0.1, 0.2, 0.33, 0.5, 1.0] {
            assert!(trial_bound(&m, sigma).unwrap() <= res.value + 1e-6);
        }
    }

    #[test]
    fn ascent_at_zero_intensity_flattens() {
        let m = delta(0.0);
        let cfg = VariationalConfig { half_width: Some(2.0), ..small_config() };
        let res = solve(&m, &cfg).unwrap();
        assert!(res.history.windows(2).all(|w| w[1] >= w[0]));
        assert!(res.value <= 0.0);
        assert!(res.value >= res.history[0]);
        // lowest mode of the discrete Dirichlet operator on n cells
        let dx = res.maximizer.dx();
        let floor = -(1.0 - (std::f64::consts::PI / 33.0).cos()) / (dx * dx);
        assert_relative_eq!(res.value, floor, max_relative = 1e-6);
    }

    #[test]
    fn reflection_invariance() {
        let m = CovarianceModel::riesz(0.5, 0.5, 1, 1.0).unwrap();
        let t = best_trial(&m).unwrap();
        let l = 6.0 * t.sigma;
        let g0 = GridFunction::from_fn(8, 24, 1, l, |s, x| (-(x[0] - 0.2 * l * s).powi(2) / (4.0 * t.sigma.powi(2))).exp())
            .unwrap();
        let cfg = AscentConfig::default();
        let a = ascend(&g0, &m, &cfg).unwrap();
        let b = ascend(&g0.reflect(), &m, &cfg).unwrap();
        assert_relative_eq!(a.value, b.value, max_relative = 1e-8);
    }

    #[test]
    fn value_nondecreasing_in_lambda() {
        let m = delta(1.0);
        let cfg = VariationalConfig { half_width: Some(2.0), ..small_config() };
        let mut last = f64::NEG_INFINITY;
        for lam in [0.5, 1.0, 1.5, 2.0] {
            let v = solve(&m.with_lambda(lam).unwrap(), &cfg).unwrap().value;
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn scaling_check_self_ratio_is_zero() {
        let rows = scaling_check(&delta(1.0), &[1.0], &small_config()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].residual, 0.0);
    }

    #[test]
    fn two_dimensional_solve_runs() {
        let m = CovarianceModel::riesz(0.5, 1.0, 2, 1.0).unwrap();
        let cfg = VariationalConfig { m: 4, n: 12, half_width: None, ascent: AscentConfig { max_iter: 400, ..Default::default() } };
        let res = solve(&m, &cfg).unwrap();
        assert!(res.history.windows(2).all(|w| w[1] >= w[0]));
        assert!(res.value >= best_trial(&m).unwrap().value - 1e-2);
    }

    #[test]
    fn rejects_non_integrable_riesz() {
        let m = CovarianceModel::riesz(0.5, 1.0, 1, 1.0).unwrap();
        let g = GridFunction::gaussian(2, 8, 1, 1.0, 0.3).unwrap();
        assert!(interaction_term(&g, &m).is_err());
    }
}
