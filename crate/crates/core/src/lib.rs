//! Numerical laboratory for the stochastic heat equation driven by the
//! restricted fractional Laplacian on (-1, 1) with zero exterior condition.

pub mod cli;
pub mod error;
pub mod grid;
pub mod heatkernel;
pub mod moments;
pub mod noise;
pub mod numerics;
pub mod rng;
pub mod secondmoment;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
pub use grid::{Grid1D, Region};
