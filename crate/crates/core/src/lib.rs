//! Slow-driving thermodynamics of periodically driven, weakly coupled
//! quantum heat engines on finite-dimensional Hilbert spaces.
//!
//! The crate is organized around four layers:
//! - [`opalg`]: Hermitian operators, Gibbs states, matrix means, skew
//!   covariance;
//! - [`lindblad`]: detailed-balanced GKLS generators, Heisenberg
//!   propagation, the theta-integral (Drazin-type pseudoinverse) and
//!   spectral gaps;
//! - [`thermo`]: driving protocols and the slow-driving functionals (power,
//!   heat flux, entropy production rate, fluctuations, quantum correction,
//!   efficiency bounds, TUR residual);
//! - [`oscillator`]: closed-form single-ion engine expressions used as the
//!   fast path and as an independent oracle for the matrix pipeline.
//!
//! [`verify`] bundles the randomized invariant suites behind a seedable,
//! machine-readable interface consumed by the CLI and the acceptance tests.

pub mod error;
pub mod lindblad;
pub mod models;
pub mod opalg;
pub mod oscillator;
pub mod quad;
pub mod thermo;
pub mod verify;

pub use error::{Error, Result};
pub use opalg::{GibbsState, HermitianOperator};
pub use thermo::{EngineReport, Protocol};
