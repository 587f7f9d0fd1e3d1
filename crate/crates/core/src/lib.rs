//! Parallel multidimensional integration on the unit cube.
//!
//! Two integrators share one execution engine:
//!
//! * [`pagani`]: deterministic adaptive cubature. Every region is evaluated
//!   with a degree-7 fully symmetric rule plus four null rules; regions are
//!   bisected along the axis with the largest fourth difference.
//! * [`mcubes`]: stratified Monte Carlo over `g^d` sub-cubes, sampled through
//!   a VEGAS importance grid that is refit between iterations.
//!
//! [`integrands`] holds the benchmark families with independently derived
//! reference values, and [`exec`] provides work-group scheduling and
//! reproducible reductions.

// `!(x > 0.0)` style checks are intentional: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod domain;
pub mod error;
pub mod exec;
pub mod integrands;
pub mod mcubes;
pub mod pagani;
pub mod quadrature;
pub mod rng;
mod sobol;
pub mod vegas;

pub use domain::{
    region_volume, uniform_split, FnIntegrand, Integrand, IntegrationBounds, Point, Region, RegionEstimates,
    RegionList, RegionRef, DEFAULT_REGION_CAP, MAX_DIM,
};
pub use error::{Error, Result};
pub use exec::{Exec, ExecConfig, ReductionMode};
