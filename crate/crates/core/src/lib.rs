//! Spectral Galerkin simulation of the stochastically forced wave equation
//! with nonlinear velocity damping, and Monte Carlo estimators for its
//! ergodic behaviour.

pub mod coupling;
pub mod error;
pub mod experiments;
pub mod integrator;
pub mod lyapunov;
pub mod model;
pub mod quad;
pub mod ratekit;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod transport;

pub use error::{Error, Result};
