use super::noise::NoiseField;
use super::solution::MAX_LEVEL;
use crate::error::{invalid, Result};

/// Covariance lookup used by normal ordering.
#[derive(Debug, Clone, Copy)]
pub struct WickContext<'a> {
    noise: &'a NoiseField,
}

impl<'a> WickContext<'a> {
    pub fn new(noise: &'a NoiseField) -> Self {
        Self { noise }
    }

    pub fn covariance(&self, a: usize, b: usize) -> f64 {
        self.noise.covariance(a, b)
    }
}

/// Normal-ordered product `:ξ_{c_1} ⋯ ξ_{c_k}:` of the sampled cell values
/// `values` (indexed by flat cell):
/// `Σ_P (-1)^{|P|} Π_{(a,b) ∈ P} cov(a, b) Π_{c unpaired} ξ_c`
/// over partial pairings `P` of the tuple.
pub fn wick_product(cells: &[usize], values: &[f64], ctx: &WickContext<'_>) -> Result<f64> {
    if cells.len() > MAX_LEVEL {
        return Err(invalid(format!("Wick products are limited to {MAX_LEVEL} factors")));
    }
    let x: Vec<f64> = cells.iter().map(|&c| values[c]).collect();
    Ok(pairing_sum(cells, &x, &|a, b| ctx.covariance(a, b)))
}

/// Partial-pairing expansion over an arbitrary covariance.
pub(crate) fn pairing_sum(cells: &[usize], x: &[f64], cov: &dyn Fn(usize, usize) -> f64) -> f64 {
    // the first factor is either left unpaired or paired with a later one
    match cells.len() {
        0 => 1.0,
        1 => x[0],
        _ => {
            let mut total = x[0] * pairing_sum(&cells[1..], &x[1..], cov);
            for j in 1..cells.len() {
                let mut rest_c = Vec::with_capacity(cells.len() - 2);
                let mut rest_x = Vec::with_capacity(cells.len() - 2);
                for i in 1..cells.len() {
                    if i != j {
                        rest_c.push(cells[i]);
                        rest_x.push(x[i]);
                    }
                }
                total -= cov(cells[0], cells[j]) * pairing_sum(&rest_c, &rest_x, cov);
            }
            total
        }
    }
}
