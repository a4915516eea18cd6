use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use super::grid::SpaceTimeGrid;
use crate::error::{invalid, Error, Result};
use crate::kernel::temporal_cell_row;
use crate::model::CovarianceModel;
use crate::rng::StreamKey;
use crate::toeplitz::OffsetOperator;

/// Relative size below which negative eigenvalues are treated as round-off.
const EIGEN_FLOOR: f64 = 1e-10;

/// Covariance of the cell integrals `ξ_(i,y) = ∫_{slice i} ∫_{cell y} W(ds, dy)`,
/// stored as its temporal and spatial Kronecker factors.
#[derive(Debug, Clone)]
pub struct NoiseField {
    m: usize,
    cells: usize,
    temporal: DMatrix<f64>,
    spatial: DMatrix<f64>,
    temporal_root: DMatrix<f64>,
    spatial_root: DMatrix<f64>,
}

/// `V diag(√λ) ` with eigenvalues floored at zero.
fn floored_root(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || !min.is_finite() {
        return Err(Error::Factorization(format!("{what} covariance has no positive spectrum (max eigenvalue {max})")));
    }
    if min < -EIGEN_FLOOR * max {
        return Err(Error::Factorization(format!(
            "{what} covariance is indefinite: eigenvalue range [{min:.3e}, {max:.3e}], ratio {:.3e}",
            min / max
        )));
    }
    let mut root = eig.eigenvectors;
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        root.column_mut(j).scale_mut(s);
    }
    Ok(root)
}

/// Cell covariance `T ⊗ S` of the noise on `grid`, with floored
/// eigen-factorizations of both factors.
pub fn build_noise(grid: &SpaceTimeGrid, model: &CovarianceModel) -> Result<NoiseField> {
    if grid.d() != model.d() {
        return Err(invalid("grid dimension does not match model"));
    }
    model.require_integrable()?;
    let m = grid.m();
    let row = temporal_cell_row(model.alpha0(), grid.dt(), m);
    let temporal = DMatrix::from_fn(m, m, |i, j| row[i.abs_diff(j)]);
    let (kernel, alpha, d, dx) = (model.kernel(), model.alpha(), grid.d(), grid.dx());
    let spatial = OffsetOperator::from_fn(d, grid.n(), |o| kernel.cell_pair_integral(alpha, d, dx, o)).dense();
    let temporal_root = floored_root(&temporal, "temporal")?;
    let spatial_root = floored_root(&spatial, "spatial")?;
    Ok(NoiseField { m, cells: grid.cells(), temporal, spatial, temporal_root, spatial_root })
}

impl NoiseField {
    pub fn size(&self) -> usize {
        self.m * self.cells
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn temporal(&self) -> &DMatrix<f64> {
        &self.temporal
    }

    pub fn spatial(&self) -> &DMatrix<f64> {
        &self.spatial
    }

    /// Covariance of flat cells `a = i * cells + y` and `b`.
    #[inline]
    pub fn covariance(&self, a: usize, b: usize) -> f64 {
        let (i, y) = (a / self.cells, a % self.cells);
        let (j, z) = (b / self.cells, b % self.cells);
        self.temporal[(i, j)] * self.spatial[(y, z)]
    }

    /// The full `T ⊗ S` matrix.
    pub fn dense(&self) -> DMatrix<f64> {
        self.temporal.kronecker(&self.spatial)
    }

    /// One draw of all cell integrals, flattened as `i * cells + y`, from
    /// lane 0 of the stream for `sample`.
    pub fn sample(&self, key: &StreamKey, sample: u64) -> Vec<f64> {
        let mut rng = key.stream(sample, 0);
        let z: Vec<f64> = (0..self.size()).map(|_| rng.sample(StandardNormal)).collect();
        let z = DMatrix::from_row_slice(self.m, self.cells, &z);
        let xi = &self.temporal_root * z * self.spatial_root.transpose();
        let mut out = Vec::with_capacity(self.size());
        for i in 0..self.m {
            out.extend(xi.row(i).iter());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kronecker_matches_entrywise_assembly() {
        let grid = SpaceTimeGrid::centred(0.5, 3, 4, 1.0, 1).unwrap();
        let model = CovarianceModel::riesz(0.5, 0.6, 1, 1.0).unwrap();
        let noise = build_noise(&grid, &model).unwrap();
        let dense = noise.dense();
        let dt = grid.dt();
        let dx = grid.dx();
        for a in 0..12 {
            for b in 0..12 {
                let direct = crate::kernel::power_cell_pair_integral(0.5, dt, (a / 4) as i64 - (b / 4) as i64)
                    * crate::kernel::power_cell_pair_integral(0.6, dx, (a % 4) as i64 - (b % 4) as i64);
                assert_relative_eq!(dense[(a, b)], direct, max_relative = 1e-12);
                assert_eq!(noise.covariance(a, b), dense[(a, b)]);
            }
        }
    }

    #[test]
    fn roots_reproduce_factors() {
        let grid = SpaceTimeGrid::centred(1.0, 6, 5, 1.0, 2).unwrap();
        let model = CovarianceModel::riesz(0.4, 1.0, 2, 1.0).unwrap();
        let noise = build_noise(&grid, &model).unwrap();
        let t = &noise.temporal_root * noise.temporal_root.transpose();
        let s = &noise.spatial_root * noise.spatial_root.transpose();
        assert!((t - &noise.temporal).amax() < 1e-12 * noise.temporal.amax());
        assert!((s - &noise.spatial).amax() < 1e-10 * noise.spatial.amax());
        assert_eq!(noise.spatial, noise.spatial.transpose());
    }

    #[test]
    fn sample_covariance_matches() {
        let grid = SpaceTimeGrid::centred(1.0, 2, 2, 1.0, 1).unwrap();
        let model = CovarianceModel::delta(0.5, 1.0).unwrap();
        let noise = build_noise(&grid, &model).unwrap();
        let key = StreamKey::new(11);
        let n = 20000;
        let mut acc = DMatrix::<f64>::zeros(4, 4);
        for s in 0..n {
            let x = noise.sample(&key, s);
            for a in 0..4 {
                for b in 0..4 {
                    acc[(a, b)] += x[a] * x[b] / n as f64;
                }
            }
        }
        let dense = noise.dense();
        for a in 0..4 {
            for b in 0..4 {
                let sd = ((dense[(a, a)] * dense[(b, b)] + dense[(a, b)].powi(2)) / n as f64).sqrt();
                assert!((acc[(a, b)] - dense[(a, b)]).abs() < 4.0 * sd);
            }
        }
    }
}
