use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::grid::SpaceTimeGrid;
use super::noise::{build_noise, NoiseField};
use super::solution::{build_kernels, mehler_action, ChaosSolution, KernelOptions};
use super::wick::pairing_sum;
use crate::error::{invalid, Error, Result};
use crate::model::{hypercontract_map, CovarianceModel};
use crate::rng::StreamKey;
use crate::stats::{Engine, MomentEstimate};

/// Highest level handled by the closed-form sampling recursion and by
/// [`second_moment_exact`].
const FAST_LEVEL: usize = 3;

/// Per-sample work allowed for brute-force enumeration at `K > 3`.
const BRUTE_FORCE_CAP: u64 = 2_000_000;

/// Unweighted level values `L_k = Σ_a h_k(a) :ξ_a:` per sample, so
/// that `u = Σ_k weight_k L_k` for any set of level weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSamples {
    truncation: usize,
    data: Vec<f64>,
}

impl LevelSamples {
    pub fn samples(&self) -> usize {
        self.data.len() / (self.truncation + 1)
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn level(&self, sample: usize, k: usize) -> f64 {
        self.data[sample * (self.truncation + 1) + k]
    }

    /// `u` per sample for the given level weights.
    pub fn values(&self, weights: &[f64]) -> Vec<f64> {
        self.data
            .chunks(self.truncation + 1)
            .map(|l| l.iter().zip(weights).map(|(a, w)| a * w).sum())
            .collect()
    }
}

/// Deterministic pieces of the normal-ordered recursion.
struct Recursion {
    truncation: usize,
    terminal: DVector<f64>,
    transition: DMatrix<f64>,
    /// `Σ R e`, the pairing removed from level 2
    d2: f64,
    e1: DVector<f64>,
    e23: DVector<f64>,
}

impl Recursion {
    fn new(sol: &ChaosSolution, noise: &NoiseField) -> Self {
        let k = sol.truncation();
        let r = sol.terminal().clone();
        let q = sol.transition().clone();
        let size = r.len();
        let (mut d2, mut e1, mut e23) = (0.0, DVector::zeros(size), DVector::zeros(size));
        if k >= 2 {
            let c = noise.dense();
            let qc = q.component_mul(&c);
            let e = qc.column_sum();
            d2 = r.dot(&e);
            if k >= 3 {
                e1 = &q * &e;
                let eps = qc.transpose() * &r;
                let e3 = q.transpose() * eps;
                // E2(a2) = Σ_{a3} R(a3) Q(a3, a2) (C Qᵀ)(a3, a2)
                let cqt = &c * q.transpose();
                let mut e2 = q.component_mul(&cqt).transpose() * &r;
                e2 += e3;
                e23 = e2;
            }
        }
        Self { truncation: k, terminal: r, transition: q, d2, e1, e23 }
    }

    fn levels(&self, xi: &[f64], out: &mut [f64]) {
        let xi = DVector::from_column_slice(xi);
        out[0] = 1.0;
        if self.truncation == 0 {
            return;
        }
        let rxi = self.terminal.component_mul(&xi);
        out[1] = rxi.sum();
        if self.truncation == 1 {
            return;
        }
        let v1 = &self.transition * &xi;
        out[2] = rxi.dot(&v1) - self.d2;
        if self.truncation == 2 {
            return;
        }
        let v2 = &self.transition * xi.component_mul(&v1);
        out[3] = rxi.dot(&(v2 - &self.e1)) - xi.dot(&self.e23);
    }
}

/// Level values of one noise sample by explicit enumeration of all
/// time-ordered tuples and their Wick products.
pub fn brute_force_levels(sol: &ChaosSolution, noise: &NoiseField, xi: &[f64]) -> Vec<f64> {
    let k = sol.truncation();
    let cells = sol.grid().cells();
    let size = xi.len();
    let mut levels = vec![0.0; k + 1];
    levels[0] = 1.0;
    let cov = |a: usize, b: usize| noise.covariance(a, b);
    let mut tuple = Vec::with_capacity(k);
    fn walk(
        sol: &ChaosSolution,
        xi: &[f64],
        cov: &dyn Fn(usize, usize) -> f64,
        cells: usize,
        size: usize,
        chain: f64,
        tuple: &mut Vec<usize>,
        levels: &mut [f64],
    ) {
        let depth = tuple.len();
        if depth > 0 {
            let last = tuple[depth - 1];
            let x: Vec<f64> = tuple.iter().map(|&c| xi[c]).collect();
            levels[depth] += chain * sol.terminal()[last] * pairing_sum(tuple, &x, cov);
        }
        if depth + 1 >= levels.len() {
            return;
        }
        let start = match tuple.last() {
            Some(&a) => (a / cells) * cells,
            None => 0,
        };
        for a in start..size {
            let link = match tuple.last() {
                Some(&b) => sol.transition()[(a, b)],
                None => 1.0,
            };
            if link == 0.0 {
                continue;
            }
            tuple.push(a);
            walk(sol, xi, cov, cells, size, chain * link, tuple, levels);
            tuple.pop();
        }
    }
    walk(sol, xi, &cov, cells, size, 1.0, &mut tuple, &mut levels);
    levels
}

fn brute_force_work(sol: &ChaosSolution) -> u64 {
    let (m, cells) = (sol.grid().m() as u64, sol.grid().cells() as u64);
    let mut total = 0u64;
    let mut choose = 1u64;
    for k in 1..=sol.truncation() as u64 {
        // time-ordered multisets of slices bound both orderings
        choose = choose.saturating_mul(m + k - 1) / k;
        total = total.saturating_add(choose.saturating_mul(cells.saturating_pow(k as u32)));
    }
    total
}

/// Level values for samples `0..samples`, in sample order.
pub fn sample_levels(sol: &ChaosSolution, noise: &NoiseField, samples: usize, key: &StreamKey) -> Result<LevelSamples> {
    if samples == 0 {
        return Err(invalid("need at least one sample"));
    }
    if noise.size() != sol.grid().size() {
        return Err(invalid("noise field does not match the solution grid"));
    }
    let k = sol.truncation();
    let mut data = vec![0.0; samples * (k + 1)];
    if k <= FAST_LEVEL {
        let rec = Recursion::new(sol, noise);
        data.par_chunks_mut(k + 1).enumerate().for_each(|(s, out)| {
            rec.levels(&noise.sample(key, s as u64), out);
        });
    } else {
        let work = brute_force_work(sol);
        if work > BRUTE_FORCE_CAP {
            return Err(Error::ResourceCap {
                what: format!("enumerating level {k} tuples"),
                needed: work,
                cap: BRUTE_FORCE_CAP,
            });
        }
        data.par_chunks_mut(k + 1).enumerate().for_each(|(s, out)| {
            out.copy_from_slice(&brute_force_levels(sol, noise, &noise.sample(key, s as u64)));
        });
    }
    Ok(LevelSamples { truncation: k, data })
}

/// Estimates of `E|u|^p` for each order in `orders`, all from the same samples.
pub fn estimate_norms(
    sol: &ChaosSolution,
    noise: &NoiseField,
    orders: &[f64],
    samples: usize,
    key: &StreamKey,
) -> Result<Vec<MomentEstimate>> {
    if let Some(p) = orders.iter().find(|&&p| !(p >= 1.0)) {
        return Err(invalid(format!("moment order must be at least 1, got {p}")));
    }
    let u = sample_levels(sol, noise, samples, key)?.values(sol.weights());
    Ok(orders.iter().map(|&p| moments_of(&u, p, sol)).collect())
}

fn moments_of(u: &[f64], p: f64, sol: &ChaosSolution) -> MomentEstimate {
    let v: Vec<f64> = u.iter().map(|x| x.abs().powf(p)).collect();
    MomentEstimate::from_values(Engine::Chaos, p, sol.lambda(), sol.grid().t(), &v)
}

/// Monte Carlo `E|u|^p`; [`MomentEstimate::norm`] gives the `L^p` norm.
pub fn estimate_lp(sol: &ChaosSolution, noise: &NoiseField, p: f64, samples: usize, key: &StreamKey) -> Result<MomentEstimate> {
    Ok(estimate_norms(sol, noise, &[p], samples, key)?.remove(0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondMoment {
    pub value: f64,
    /// Contribution of each level, `levels[0] = 1`.
    pub levels: Vec<f64>,
    /// Geometric extrapolation of the omitted levels,
    /// `S_K r / (1 - r)` with `r = S_K / S_{K-1}`; infinite when `r ≥ 1`.
    pub tail_proxy: f64,
}

/// Pairing graph of one level: nodes carry optional vectors, edges carry
/// matrices indexed `[tail, head]`.
struct Graph {
    alive: Vec<bool>,
    unary: Vec<Option<DVector<f64>>>,
    edges: Vec<(usize, usize, DMatrix<f64>)>,
}

impl Graph {
    /// Matrix of edge `e` with rows indexed by node `v`.
    fn oriented(&self, e: usize, v: usize) -> DMatrix<f64> {
        let (a, _, ref m) = self.edges[e];
        if a == v {
            m.clone()
        } else {
            m.transpose()
        }
    }

    fn incident(&self, v: usize) -> Vec<usize> {
        (0..self.edges.len()).filter(|&e| self.edges[e].0 == v || self.edges[e].1 == v).collect()
    }

    fn other(&self, e: usize, v: usize) -> usize {
        if self.edges[e].0 == v {
            self.edges[e].1
        } else {
            self.edges[e].0
        }
    }

    fn scale_unary(&mut self, v: usize, s: DVector<f64>) {
        self.unary[v] = Some(match self.unary[v].take() {
            Some(u) => u.component_mul(&s),
            None => s,
        });
    }

    /// Sums out every node by series/parallel reduction.
    fn contract(mut self, size: usize) -> Result<f64> {
        let mut factor = 1.0;
        loop {
            let alive: Vec<usize> = (0..self.alive.len()).filter(|&v| self.alive[v]).collect();
            let Some(&v) = alive.iter().min_by_key(|&&v| self.incident(v).len()) else {
                return Ok(factor);
            };
            let inc = self.incident(v);
            let sum_unary = |u: &Option<DVector<f64>>| u.as_ref().map_or(size as f64, |x| x.sum());
            match inc.len() {
                0 => factor *= sum_unary(&self.unary[v]),
                1 => {
                    let w = self.other(inc[0], v);
                    let m = self.oriented(inc[0], v);
                    let s = match &self.unary[v] {
                        Some(u) => m.transpose() * u,
                        None => m.row_sum().transpose(),
                    };
                    self.edges.remove(inc[0]);
                    self.scale_unary(w, s);
                }
                2 => {
                    let (u, w) = (self.other(inc[0], v), self.other(inc[1], v));
                    let mut a = self.oriented(inc[0], u);
                    let b = self.oriented(inc[1], v);
                    if let Some(x) = &self.unary[v] {
                        for (j, mut col) in a.column_iter_mut().enumerate() {
                            col *= x[j];
                        }
                    }
                    let joined = a * b;
                    self.edges.remove(inc[1]);
                    self.edges.remove(inc[0]);
                    match self.edges.iter().position(|(p, q, _)| (*p == u && *q == w) || (*p == w && *q == u)) {
                        Some(e) => {
                            let aligned = if self.edges[e].0 == u { joined } else { joined.transpose() };
                            self.edges[e].2.component_mul_assign(&aligned);
                        }
                        None => self.edges.push((u, w, joined)),
                    }
                }
                _ => return Err(invalid("pairing graph is not series-parallel reducible")),
            }
            self.alive[v] = false;
            self.unary[v] = None;
        }
    }
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// Exact `E u²` of the truncated expansion: level `k` contributes
/// `weight_k² Σ_{a,b} h_k(a) h_k(b) Σ_σ Π_i C(a_i, b_σ(i))`, and cross-level
/// terms vanish. Each complete pairing `σ` is a graph contracted by dense
/// matrix products.
pub fn second_moment_exact(sol: &ChaosSolution, noise: &NoiseField) -> Result<SecondMoment> {
    let k = sol.truncation();
    if k > FAST_LEVEL {
        return Err(invalid(format!("exact second moment supports K <= {FAST_LEVEL}, got {k}")));
    }
    if noise.size() != sol.grid().size() {
        return Err(invalid("noise field does not match the solution grid"));
    }
    let size = noise.size();
    let c = if k >= 1 { noise.dense() } else { DMatrix::zeros(0, 0) };
    let mut levels = vec![1.0];
    for level in 1..=k {
        let w2 = sol.level_weight(level).powi(2);
        if w2 == 0.0 {
            levels.push(0.0);
            continue;
        }
        let mut total = 0.0;
        for sigma in permutations(level) {
            let mut unary = vec![None; 2 * level];
            unary[level - 1] = Some(sol.terminal().clone());
            unary[2 * level - 1] = Some(sol.terminal().clone());
            let mut edges = Vec::new();
            for i in 0..level - 1 {
                edges.push((i + 1, i, sol.transition().clone()));
                edges.push((level + i + 1, level + i, sol.transition().clone()));
            }
            for (i, &j) in sigma.iter().enumerate() {
                edges.push((i, level + j, c.clone()));
            }
            let graph = Graph { alive: vec![true; 2 * level], unary, edges };
            total += graph.contract(size)?;
        }
        levels.push(w2 * total);
    }
    let value = levels.iter().sum();
    let last = levels[k];
    let tail_proxy = if last == 0.0 {
        0.0
    } else if k == 0 {
        f64::INFINITY
    } else {
        let r = last / levels[k - 1];
        if r < 1.0 {
            last * r / (1.0 - r)
        } else {
            f64::INFINITY
        }
    };
    Ok(SecondMoment { value, levels, tail_proxy })
}

/// Outcome of one comparison `‖u_{λ'}‖_q ≤ ‖u_λ‖_p` with `λ' = (p-1)λ/(q-1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperRecord {
    pub p: f64,
    pub q: f64,
    pub lambda: f64,
    pub lambda_q: f64,
    pub tau: f64,
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub rhs: f64,
    pub rhs_stderr: f64,
    pub combined_stderr: f64,
    /// `rhs - lhs`
    pub margin: f64,
    pub pass: bool,
    pub samples: usize,
}

/// Compares `‖u_{(p-1)λ/(q-1)}‖_q` with `‖u_λ‖_p`, both evaluated on the same
/// noise samples.
pub fn hypercontractivity_test(
    grid: &SpaceTimeGrid,
    model: &CovarianceModel,
    truncation: usize,
    p: f64,
    q: f64,
    samples: usize,
    key: &StreamKey,
    options: KernelOptions,
) -> Result<HyperRecord> {
    let map = hypercontract_map(p, q)?;
    let noise = build_noise(grid, model)?;
    let sol = build_kernels(grid, model, truncation, options)?;
    let damped = mehler_action(&sol, map.tau)?;
    let levels = sample_levels(&sol, &noise, samples, key)?;
    let rhs = moments_of(&levels.values(sol.weights()), p, &sol);
    let lhs = moments_of(&levels.values(damped.weights()), q, &damped);
    let (l, ls, r, rs) = (lhs.norm(), lhs.norm_stderr(), rhs.norm(), rhs.norm_stderr());
    let combined = (ls * ls + rs * rs).sqrt();
    Ok(HyperRecord {
        p,
        q,
        lambda: model.lambda(),
        lambda_q: damped.lambda(),
        tau: map.tau,
        lhs: l,
        lhs_stderr: ls,
        rhs: r,
        rhs_stderr: rs,
        combined_stderr: combined,
        margin: r - l,
        pass: l <= r + 2.0 * combined,
        samples,
    })
}
