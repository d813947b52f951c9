//! Simulation and identification of discrete-time linear SISO systems driven
//! by Lévy-process increments.
//!
//! The library simulates `dy = A(theta, q^-1) dZ` for an ARMA transfer
//! function `A` and centered i.i.d. increments `dZ` with a known
//! characteristic function, and identifies both the dynamics and the noise
//! law in three stages:
//!
//! 1. prediction-error estimation of the dynamics ([`pe`]),
//! 2. characteristic-function matching of the noise parameters on the
//!    estimated innovations ([`ecf_iid`]),
//! 3. re-estimation of the dynamics with sensitivity-weighted
//!    characteristic-function scores and Kronecker weighting ([`ecf_system`]).
//!
//! Each stage reports its asymptotic covariance, and the Monte Carlo harness
//! ([`monte_carlo`]) verifies those formulas empirically.

pub mod config;
pub mod ecf_iid;
pub mod ecf_system;
pub mod error;
pub mod grid;
pub mod monte_carlo;
pub mod noise;
pub mod numeric;
pub mod pe;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod system;

pub use error::{Error, Result};
