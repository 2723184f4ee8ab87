//! Simulation and verification toolkit for diffusion in fast cellular flows.
//!
//! The tracer obeys `dX = -A v(X) dt + sqrt(2) dW` with the cellular velocity
//! `v = grad_perp h`, `h(x) = sin(x1) sin(x2)`. The crate provides:
//!
//! - [`flowfield`]: exact evaluation of `h`, `v`, derivatives and the
//!   boundary-layer / corner / edge region classification;
//! - [`sde`]: seeded Euler–Maruyama path simulation;
//! - [`crossing`]: online detection of separatrix hits and layer exits;
//! - [`ensemble`]: deterministic parallel Monte Carlo over many paths;
//! - [`bounds`]: closed-form crossing-time CDF bounds and their identities;
//! - [`stats`]: variance curves, empirical CDFs, constant fits;
//! - [`cellpde`]: finite-volume cell problems and super-solution audits.

pub mod bounds;
pub mod error;
pub mod cellpde;
pub mod crossing;
pub mod ensemble;
pub mod flowfield;
pub mod linalg;
pub mod quadrature;
pub mod sde;
pub mod starts;
pub mod stats;

pub use flowfield::{FlowParams, Point, RegionTag};
pub use sde::{NoiseStream, ParticleState, StepPolicy};
pub use error::{Error, Result};
