//! Sparse variable selection for the intensity of spatial point processes.
//!
//! The crate covers the full pipeline used to study covariate selection
//! under noisy observations:
//!
//! * [`geometry`]: windows, raster covariates, midpoint quadrature;
//! * [`simulate`]: inhomogeneous Poisson and Thomas samplers;
//! * [`noise`]: localization/detection noise and independent p-thinning;
//! * [`likelihood`]: the discretized Poisson composite likelihood;
//! * [`solver`]: proximal gradient descent with L0/L1 adaptive penalties;
//! * [`criteria`]: BIC, ERIC and their composite versions;
//! * [`secondorder`]: inhomogeneous K-function and minimum contrast;
//! * [`stability`]: stability selection with PFER control;
//! * [`metrics`]: selection metrics and the Φ_S stability statistic;
//! * [`bench`]: the Monte Carlo scenario runner.

pub mod bench;
pub mod criteria;
mod error;
pub mod geometry;
pub mod io;
mod kernel;
pub mod likelihood;
pub mod metrics;
pub mod noise;
pub mod rng;
pub mod secondorder;
pub mod simulate;
pub mod solver;
pub mod stability;

pub use error::{Error, Result};
pub use geometry::{CovariateField, Grid, PointPattern, QuadratureScheme, Window};
pub use simulate::{LogLinearModel, ThomasParams};
