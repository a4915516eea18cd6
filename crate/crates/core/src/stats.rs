//! Monte Carlo moment estimates.

use std::fmt;

/// Which engine produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    FeynmanKac,
    Chaos,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Engine::FeynmanKac => f.write_str("fk"),
            Engine::Chaos => f.write_str("chaos"),
        }
    }
}

/// Estimated moment `E X` with its standard error.
///
/// `log_stderr` is the standard error of `log_value` by the delta method,
/// i.e. `stderr / value`, and stays finite when `value` overflows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub engine: Engine,
    pub order: f64,
    pub lambda: f64,
    pub t: f64,
    pub value: f64,
    pub log_value: f64,
    pub stderr: f64,
    pub log_stderr: f64,
    pub samples: usize,
    pub heavy_tail: bool,
}

/// Fraction of samples treated as "the top" by the heavy-tail diagnostic.
const TOP_FRACTION: f64 = 0.01;
/// The heavy-tail flag is raised when the top samples carry more than this share of the sum.
const TOP_SHARE: f64 = 0.5;

impl MomentEstimate {
    /// Mean of `exp(w_i)` from log-weights, in log-sum-exp form.
    pub fn from_log_weights(engine: Engine, order: f64, lambda: f64, t: f64, log_w: &[f64]) -> Self {
        let n = log_w.len();
        assert!(n > 0, "no samples");
        let wmax = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let scaled: Vec<f64> = log_w.iter().map(|w| (w - wmax).exp()).collect();
        let (mean, var) = mean_var(&scaled);
        let se_scaled = (var / n as f64).sqrt();
        let log_value = wmax + mean.ln();
        Self {
            engine,
            order,
            lambda,
            t,
            value: log_value.exp(),
            log_value,
            stderr: wmax.exp() * se_scaled,
            log_stderr: se_scaled / mean,
            samples: n,
            heavy_tail: heavy_tail(&scaled),
        }
    }

    /// Mean of nonnegative sample values.
    pub fn from_values(engine: Engine, order: f64, lambda: f64, t: f64, values: &[f64]) -> Self {
        let n = values.len();
        assert!(n > 0, "no samples");
        let (mean, var) = mean_var(values);
        let stderr = (var / n as f64).sqrt();
        Self {
            engine,
            order,
            lambda,
            t,
            value: mean,
            log_value: mean.ln(),
            stderr,
            log_stderr: if mean > 0.0 { stderr / mean } else { f64::INFINITY },
            samples: n,
            heavy_tail: heavy_tail(values),
        }
    }

    /// `value^{1/order}`: the `L^p` norm when the estimate is `E|u|^p`.
    pub fn norm(&self) -> f64 {
        (self.log_value / self.order).exp()
    }

    pub fn norm_stderr(&self) -> f64 {
        self.norm() * self.log_stderr / self.order
    }
}

/// Sample mean and unbiased sample variance, summed in index order.
pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, ss / (n - 1.0))
}

fn heavy_tail(weights: &[f64]) -> bool {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return false;
    }
    let mut sorted = weights.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let top = ((weights.len() as f64 * TOP_FRACTION).ceil() as usize).max(1);
    sorted[..top].iter().sum::<f64>() > TOP_SHARE * total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn log_weights_match_direct_mean() {
        let w = [0.1, -0.3, 0.7, 0.2];
        let est = MomentEstimate::from_log_weights(Engine::FeynmanKac, 2.0, 1.0, 1.0, &w);
        let direct: Vec<f64> = w.iter().map(|v: &f64| v.exp()).collect();
        let (m, v) = mean_var(&direct);
        assert_relative_eq!(est.value, m, max_relative = 1e-14);
        assert_relative_eq!(est.stderr, (v / 4.0).sqrt(), max_relative = 1e-12);
        assert_relative_eq!(est.log_stderr, est.stderr / est.value, max_relative = 1e-12);
    }

    #[test]
    fn overflow_keeps_log_value_finite() {
        let w = [800.0, 801.0, 799.0];
        let est = MomentEstimate::from_log_weights(Engine::FeynmanKac, 2.0, 1.0, 1.0, &w);
        assert!(est.value.is_infinite());
        assert!(est.log_value.is_finite());
        assert!(est.log_stderr.is_finite());
    }

    #[test]
    fn zero_weights_give_exact_one() {
        let est = MomentEstimate::from_log_weights(Engine::FeynmanKac, 2.0, 0.0, 1.0, &[0.0; 10]);
        assert_eq!(est.value, 1.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn heavy_tail_flag() {
        let mut w = vec![1.0; 99];
        w.push(1000.0);
        assert!(heavy_tail(&w));
        assert!(!heavy_tail(&[1.0; 100]));
    }
}
