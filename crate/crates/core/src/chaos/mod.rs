//! Truncated Wiener-chaos solution of the discretized mild equation
//!
//! ```text
//! u(t, x) = 1 + √λ ∫∫ p_{t-s}(x - y) u(s, y) W(ds, dy)
//! ```
//!
//! The noise is represented by its integrals `ξ_a` over space-time cells
//! `a = (time slice, spatial cell)`, a centred Gaussian vector with covariance
//! `T ⊗ S`. Iterating the equation with cell-averaged heat kernels gives
//!
//! ```text
//! u = Σ_k λ^{k/2} Σ_{a_1 < … < a_k} R(a_k) Q(a_k, a_{k-1}) ⋯ Q(a_2, a_1) :ξ_{a_1} ⋯ ξ_{a_k}:
//! ```
//!
//! with time-ordered slices (see [`SliceOrdering`]) and Wick (normal-ordered)
//! products, so that distinct levels are uncorrelated.

mod grid;
mod moments;
mod noise;
mod solution;
mod wick;

pub use grid::SpaceTimeGrid;
pub use moments::{
    estimate_lp, estimate_norms, hypercontractivity_test, sample_levels, second_moment_exact, HyperRecord,
    LevelSamples, SecondMoment,
};
pub use noise::{build_noise, NoiseField};
pub use moments::brute_force_levels;
pub use solution::{build_kernels, mehler_action, ChaosSolution, KernelOptions, SliceOrdering, DEFAULT_DENSE_CAP, MAX_LEVEL};
pub use wick::{wick_product, WickContext};
