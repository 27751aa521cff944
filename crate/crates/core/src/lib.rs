//! Parallel score matching for diffusion models on 2D data.
//!
//! The crate trains independent score networks over sub-intervals of the
//! diffusion time axis (or at single grid times), composes them into one
//! probability-flow ODE and evaluates exact log-likelihoods and samples from
//! the composition.
//!
//! - [`schedule`]: closed-form forward diffusion and analytic Gaussian oracles.
//! - [`net`]: ELU multilayer perceptron with reverse-mode gradients and Adam.
//! - [`data`]: synthetic 2D distributions and the dataset file format.
//! - [`train`]: block partitions, the three training regimes, a parallel
//!   block executor and the run manifest.
//! - [`flow`]: composed probability-flow ODE, exact divergence, Euler/RK4
//!   integration, likelihood, ODE/SDE generation and density grids.

pub mod data;
pub mod error;
pub mod flow;
pub mod net;
pub mod schedule;
pub mod train;

pub use error::{Error, Result};

/// A point in the 2D data space.
pub type Point = [f64; 2];

/// Dimensionality of the data space.
pub const DATA_DIM: usize = 2;
