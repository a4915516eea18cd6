//! Monte Carlo moments through the Feynman-Kac representation
//!
//! ```text
//! E u^n(t, x) = E exp( λ Σ_{j<k} ∫∫_{[0,t]²} γ0(s - r) γ(B_j(s) - B_k(r)) ds dr ).
//! ```
//!
//! Paths are built from standard normal increments drawn lane by lane from
//! [`StreamKey::stream`], one lane per path. For a fixed step size a longer
//! horizon therefore extends the same paths, which is what makes the
//! shared-randomness comparisons in `t` exact per sample.

use log::warn;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::kernel::{temporal_cell_row, SpatialKernel};
use crate::model::{time_rate_exponent, CovarianceModel};
use crate::quadrature::normal_cdf;
use crate::rng::StreamKey;
use crate::stats::{Engine, MomentEstimate};

/// `n` discretized `d`-dimensional Brownian paths on `[0, t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianEnsemble {
    n: usize,
    d: usize,
    steps: usize,
    dt: f64,
    /// `positions[((j * (steps + 1)) + k) * d + c]`
    positions: Vec<f64>,
}

impl BrownianEnsemble {
    /// Ensemble from explicit positions (frozen paths in tests, say).
    pub fn from_positions(n: usize, d: usize, steps: usize, dt: f64, positions: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 || steps == 0 {
            return Err(invalid("ensemble needs n, d, steps >= 1"));
        }
        if !(dt > 0.0) {
            return Err(invalid(format!("time step must be positive, got {dt}")));
        }
        if positions.len() != n * (steps + 1) * d {
            return Err(invalid("position array does not match ensemble shape"));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ensemble positions".into()));
        }
        Ok(Self { n, d, steps, dt, positions })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t(&self) -> f64 {
        self.dt * self.steps as f64
    }

    /// Position of path `j` at time `k dt`.
    pub fn position(&self, j: usize, k: usize) -> &[f64] {
        let at = (j * (self.steps + 1) + k) * self.d;
        &self.positions[at..at + self.d]
    }

    pub fn terminal(&self, j: usize) -> &[f64] {
        self.position(j, self.steps)
    }

    /// Same ensemble with paths relabelled by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let len = (self.steps + 1) * self.d;
        let mut positions = Vec::with_capacity(self.positions.len());
        for &j in perm {
            positions.extend_from_slice(&self.positions[j * len..(j + 1) * len]);
        }
        Self { positions, ..self.clone() }
    }

    /// All paths mapped by `x -> -x`.
    pub fn reflected(&self) -> Self {
        Self { positions: self.positions.iter().map(|v| -v).collect(), ..self.clone() }
    }

    /// Cell midpoints `(B(k dt) + B((k+1) dt)) / 2` of path `j`, flattened.
    fn midpoints(&self, j: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.steps * self.d);
        for k in 0..self.steps {
            let a = self.position(j, k);
            let b = self.position(j, k + 1);
            out.extend(a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)));
        }
        out
    }
}

/// Samples `n` independent paths started at `origin` from lanes `0..n` of
/// the stream for `sample`.
pub fn sample_ensemble(
    n: usize,
    origin: &[f64],
    t: f64,
    steps: usize,
    key: &StreamKey,
    sample: u64,
) -> Result<BrownianEnsemble> {
    if !(t > 0.0) {
        return Err(invalid(format!("horizon must be positive, got {t}")));
    }
    if n == 0 || steps == 0 || origin.is_empty() {
        return Err(invalid("ensemble needs n, d, steps >= 1"));
    }
    let d = origin.len();
    let dt = t / steps as f64;
    let sd = dt.sqrt();
    let mut positions = Vec::with_capacity(n * (steps + 1) * d);
    for j in 0..n {
        let mut rng = key.stream(sample, j as u64);
        let mut x = origin.to_vec();
        positions.extend_from_slice(&x);
        for _ in 0..steps {
            for c in x.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *c += sd * z;
            }
            positions.extend_from_slice(&x);
        }
    }
    BrownianEnsemble::from_positions(n, d, steps, dt, positions)
}

/// Precomputed pieces of the pair energy for one `(dt, steps)` grid.
#[derive(Debug, Clone)]
pub struct PairEnergy {
    kernel: SpatialKernel,
    alpha: f64,
    d: usize,
    steps: usize,
    dt: f64,
    temporal: Vec<f64>,
    floor: f64,
    smoothing_var: f64,
}

impl PairEnergy {
    pub fn new(model: &CovarianceModel, dt: f64, steps: usize) -> Self {
        Self {
            kernel: model.kernel(),
            alpha: model.alpha(),
            d: model.d(),
            steps,
            dt,
            temporal: temporal_cell_row(model.alpha0(), dt, steps),
            floor: dt.sqrt() / 8.0,
            // B(s) at a uniform time in a step, given the endpoints, spreads
            // about the midpoint by dt/12 (interpolation) + dt/6 (bridge);
            // the displacement involves two independent paths
            smoothing_var: dt / 2.0,
        }
    }

    /// `Σ_{j<k} Σ_ab T_|a-b| γ̂(m_j(a) - m_k(b))` without the `λ` factor.
    pub fn energy(&self, ens: &BrownianEnsemble) -> Result<f64> {
        if ens.d != self.d || ens.steps != self.steps || (ens.dt - self.dt).abs() > 1e-12 * self.dt {
            return Err(invalid("ensemble grid does not match the energy grid"));
        }
        if ens.n < 2 {
            return Ok(0.0);
        }
        let mids: Vec<Vec<f64>> = (0..ens.n).map(|j| ens.midpoints(j)).collect();
        let d = self.d;
        let mut disp = vec![0.0; d];
        let mut total = 0.0;
        for j in 0..ens.n {
            for k in j + 1..ens.n {
                let (mj, mk) = (&mids[j], &mids[k]);
                for a in 0..self.steps {
                    let pa = &mj[a * d..(a + 1) * d];
                    for b in 0..self.steps {
                        for (c, v) in disp.iter_mut().enumerate() {
                            *v = pa[c] - mk[b * d + c];
                        }
                        let g = self.kernel.smoothed_value(self.alpha, d, &disp, self.smoothing_var, self.floor);
                        total += self.temporal[a.abs_diff(b)] * g;
                    }
                }
            }
        }
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("pair energy {total}")));
        }
        Ok(total)
    }
}

/// Pair energy of an ensemble under `model`, without the `λ` factor.
pub fn pair_energy(ens: &BrownianEnsemble, model: &CovarianceModel) -> Result<f64> {
    PairEnergy::new(model, ens.dt, ens.steps).energy(ens)
}

/// Per-sample pair energies for samples `0..samples`, in sample order.
pub fn sample_energies(
    n: usize,
    t: f64,
    model: &CovarianceModel,
    samples: usize,
    steps: usize,
    key: &StreamKey,
) -> Result<Vec<f64>> {
    sample_energies_from(n, &vec![0.0; model.d()], t, model, samples, steps, key)
}

/// As [`sample_energies`] with every path started at `origin`.
pub fn sample_energies_from(
    n: usize,
    origin: &[f64],
    t: f64,
    model: &CovarianceModel,
    samples: usize,
    steps: usize,
    key: &StreamKey,
) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(invalid("need at least one sample"));
    }
    if origin.len() != model.d() {
        return Err(invalid("origin dimension does not match model"));
    }
    model.require_integrable()?;
    if n < 2 {
        return Ok(vec![0.0; samples]);
    }
    let energy = PairEnergy::new(model, t / steps as f64, steps);
    (0..samples as u64)
        .into_par_iter()
        .map(|s| energy.energy(&sample_ensemble(n, origin, t, steps, key, s)?))
        .collect()
}

/// `E exp(λ E_i)` from per-sample energies.
pub fn moment_from_energies(n: usize, t: f64, lambda: f64, energies: &[f64]) -> MomentEstimate {
    let log_w: Vec<f64> = energies.iter().map(|e| lambda * e).collect();
    let est = MomentEstimate::from_log_weights(Engine::FeynmanKac, n as f64, lambda, t, &log_w);
    if est.heavy_tail {
        warn!("heavy-tailed weights for n = {n}, t = {t}, lambda = {lambda}: the top 1% of samples carry over half the mean");
    }
    est
}

/// Monte Carlo estimate of `E u^n(t, x)`.
pub fn estimate_moment(
    n: usize,
    t: f64,
    model: &CovarianceModel,
    samples: usize,
    steps: usize,
    key: &StreamKey,
) -> Result<MomentEstimate> {
    if n == 0 {
        return Err(invalid("moment order must be at least 1"));
    }
    if steps == 0 {
        return Err(invalid("need at least one time step"));
    }
    let energies = if model.lambda() == 0.0 {
        vec![0.0; samples.max(1)]
    } else {
        sample_energies(n, t, model, samples, steps, key)?
    };
    Ok(moment_from_energies(n, t, model.lambda(), &energies))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedLogMoment {
    /// `t^{-(4-α-2α0)/(2-α)} log E u^n`
    pub value: f64,
    pub stderr: f64,
    pub estimate: MomentEstimate,
}

pub fn normalize_log_moment(model: &CovarianceModel, estimate: MomentEstimate) -> NormalizedLogMoment {
    let scale = estimate.t.powf(time_rate_exponent(model));
    NormalizedLogMoment { value: estimate.log_value / scale, stderr: estimate.log_stderr / scale, estimate }
}

pub fn normalized_log_moment(
    n: usize,
    t: f64,
    model: &CovarianceModel,
    samples: usize,
    steps: usize,
    key: &StreamKey,
) -> Result<NormalizedLogMoment> {
    Ok(normalize_log_moment(model, estimate_moment(n, t, model, samples, steps, key)?))
}

/// Time-diagonal occupation approximation of the mutual local time,
/// `Σ_{j<k} (2ε)^{-1} Σ_steps 1{|B_j - B_k| ≤ ε} dt` at right endpoints.
pub fn local_time_energy(ens: &BrownianEnsemble, epsilon: f64) -> Result<f64> {
    if ens.d != 1 {
        return Err(invalid(format!("local time energy needs d = 1, got d = {}", ens.d)));
    }
    if !(epsilon > 0.0) {
        return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut hits = 0usize;
    for j in 0..ens.n {
        for k in j + 1..ens.n {
            hits += (1..=ens.steps)
                .filter(|&s| (ens.position(j, s)[0] - ens.position(k, s)[0]).abs() <= epsilon)
                .count();
        }
    }
    Ok(hits as f64 * ens.dt / (2.0 * epsilon))
}

/// Monte Carlo `E exp(λ L_ε)` for the white-noise local time functional.
pub fn estimate_local_time_moment(
    n: usize,
    t: f64,
    lambda: f64,
    epsilon: f64,
    samples: usize,
    steps: usize,
    key: &StreamKey,
) -> Result<MomentEstimate> {
    if samples == 0 || steps == 0 || n == 0 {
        return Err(invalid("need n, samples, steps >= 1"));
    }
    let energies: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|s| local_time_energy(&sample_ensemble(n, &[0.0], t, steps, key, s)?, epsilon))
        .collect::<Result<_>>()?;
    Ok(moment_from_energies(n, t, lambda, &energies))
}

/// Closed form of `E exp(λ L_t)` for two paths, where `L_t` is the mutual
/// local time at zero: `L_t` is distributed as `|Z| √(t/2)`.
pub fn two_path_local_time_moment(lambda: f64, t: f64) -> f64 {
    let a = lambda * (t / 2.0).sqrt();
    2.0 * (0.5 * a * a).exp() * normal_cdf(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_path_has_no_pairs() {
        let key = StreamKey::new(1);
        let ens = sample_ensemble(1, &[0.0], 1.0, 16, &key, 0).unwrap();
        let m = CovarianceModel::delta(0.5, 1.0).unwrap();
        assert_eq!(pair_energy(&ens, &m).unwrap(), 0.0);
        assert_eq!(local_time_energy(&ens, 0.1).unwrap(), 0.0);
        let est = estimate_moment(1, 1.0, &m, 10, 8, &key).unwrap();
        assert_eq!(est.value, 1.0);
    }

    #[test]
    fn zero_intensity_moment_is_one() {
        let m = CovarianceModel::delta(0.5, 0.0).unwrap();
        let est = estimate_moment(3, 1.0, &m, 50, 8, &StreamKey::new(2)).unwrap();
        assert_eq!(est.value, 1.0);
        assert_eq!(est.stderr, 0.0);
        assert_eq!(normalized_log_moment(3, 1.0, &m, 50, 8, &StreamKey::new(2)).unwrap().value, 0.0);
    }

    #[test]
    fn frozen_separated_paths() {
        // B_1 = 0, B_2 = e: energy = γ(e) ∬_{[0,1]²} |s-r|^{-1/2} = 8/3
        let steps = 32;
        let mut pos = vec![0.0; 2 * (steps + 1) * 2];
        for k in 0..=steps {
            pos[((steps + 1) + k) * 2] = 1.0;
        }
        let ens = BrownianEnsemble::from_positions(2, 2, steps, 1.0 / steps as f64, pos).unwrap();
        let m = CovarianceModel::riesz(0.5, 1.0, 2, 1.0).unwrap();
        assert_relative_eq!(pair_energy(&ens, &m).unwrap(), 8.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn frozen_paths_far_apart_have_no_local_time() {
        let steps = 10;
        let mut pos = vec![0.0; 2 * (steps + 1)];
        for k in 0..=steps {
            pos[steps + 1 + k] = 1.0;
        }
        let ens = BrownianEnsemble::from_positions(2, 1, steps, 0.1, pos).unwrap();
        assert_eq!(local_time_energy(&ens, 0.5).unwrap(), 0.0);
        assert!(local_time_energy(&ens, 1.0).unwrap() > 0.0);
    }

    #[test]
    fn energy_invariant_under_relabel_and_reflection() {
        let key = StreamKey::new(9);
        let m = CovarianceModel::riesz(0.5, 0.7, 2, 1.0).unwrap();
        let ens = sample_ensemble(3, &[0.0, 0.0], 0.5, 12, &key, 4).unwrap();
        let e = pair_energy(&ens, &m).unwrap();
        assert_relative_eq!(pair_energy(&ens.permuted(&[2, 0, 1]), &m).unwrap(), e, max_relative = 1e-12);
        assert_relative_eq!(pair_energy(&ens.reflected(), &m).unwrap(), e, max_relative = 1e-12);
    }

    #[test]
    fn energies_do_not_depend_on_worker_count() {
        let m = CovarianceModel::delta(0.5, 1.0).unwrap();
        let key = StreamKey::new(5);
        let one = crate::rng::with_workers(1, || sample_energies(2, 0.5, &m, 40, 8, &key).unwrap());
        let three = crate::rng::with_workers(3, || sample_energies(2, 0.5, &m, 40, 8, &key).unwrap());
        assert_eq!(one, three);
    }

    #[test]
    fn longer_horizon_extends_paths() {
        let key = StreamKey::new(3);
        let short = sample_ensemble(2, &[0.0], 1.0, 10, &key, 7).unwrap();
        let long = sample_ensemble(2, &[0.0], 2.0, 20, &key, 7).unwrap();
        for j in 0..2 {
            for k in 0..=10 {
                assert_eq!(short.position(j, k), long.position(j, k));
            }
        }
    }

    #[test]
    fn two_path_closed_form() {
        assert_relative_eq!(two_path_local_time_moment(1.0, 1.0), 1.952, max_relative = 5e-4);
        assert_eq!(two_path_local_time_moment(0.0, 1.0), 1.0);
    }

    #[test]
    fn rejects_non_integrable_model() {
        let m = CovarianceModel::riesz(0.5, 1.0, 1, 1.0).unwrap();
        assert!(estimate_moment(2, 1.0, &m, 10, 8, &StreamKey::new(1)).is_err());
    }
}
