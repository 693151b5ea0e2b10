//! Closed-form upper bounds, an Euler-characteristic approximation, and a
//! Monte Carlo validation engine for the conjunction probability
//! `P(sup_{t ∈ [0,T]} min_i X_i(t) >= u)` of smooth unit-variance Gaussian
//! processes.
//!
//! The closed-form modules are generic over the scalar type ([`Real`], with
//! `f32` and `f64` implementations). Path sampling and the Monte Carlo engine
//! run in `f64`. The aliases below fix the scalar to `f64`.

// `!(x > 0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cli;
pub mod crossings;
pub mod error;
pub mod kernels;
pub mod montecarlo;
mod num;
pub mod rng;
pub mod sampler;
pub mod scalar_stats;

pub use error::{Error, Result};
pub use num::Real;

pub type Kernel = kernels::Kernel<f64>;
pub type Warp = kernels::Warp<f64>;
pub type ProcessSet = kernels::ProcessSet<f64>;
pub type Dependence = kernels::Dependence<f64>;
pub type KernelReport = kernels::KernelReport<f64>;
pub type Grid = sampler::Grid<f64>;
pub type PathSample = sampler::PathSample<f64>;
pub type BoundReport = bounds::BoundReport<f64>;
pub type BoundInputs = bounds::BoundInputs<f64>;
pub type QuadratureSpec = scalar_stats::QuadratureSpec<f64>;
pub type Quadrature = scalar_stats::Quadrature<f64>;

pub use montecarlo::{McEstimate, McRun, PickandsEstimate, PickandsExtrapolation, Verdict};
