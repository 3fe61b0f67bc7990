//! Simulation and deterministic calculus for the stochastic heat equation
//! `∂_t u = ½Δu + σ(u)η` driven by noise that is white in time and colored
//! in space with correlation `f = h * h̃`.

pub mod corrkernel;
pub mod ergostats;
pub mod error;
pub mod extended;
pub mod fft;
pub mod gauges;
pub mod kernels;
pub mod noisegen;
pub(crate) mod optim;
pub mod quad;
pub mod rng;
pub mod solver;
pub mod stats;

pub use error::{Error, Result};
pub use extended::Extended;
pub use kernels::Dimension;
