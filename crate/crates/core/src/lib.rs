//! Numerical laboratory for pilot-wave (de Broglie-Bohm) dynamics.
//!
//! The library is organized around the pieces a pilot-wave simulation needs:
//!
//! - [`grids`]: periodic grids, spectral transforms and derivatives,
//!   off-grid interpolation.
//! - [`evolution`]: split-step spectral evolution of scalar and spinor
//!   wave functions, including a Stern-Gerlach style Pauli coupling.
//! - [`guidance`]: velocity fields from wave functions, the derived spin
//!   vector, and adaptive trajectory integration.
//! - [`equilibrium`]: sampling from |psi|^2, equivariance verification and
//!   continuity-equation residuals.
//! - [`fieldmodes`]: bosonic field-configuration dynamics in a mode
//!   truncation, with optional fermionic labels and a conditional energy
//!   density.
//! - [`adequacy`]: macroscopic-distinguishability bound formulas in SI units.
//! - [`scenarios`]: end-to-end experiment pipelines (Stern-Gerlach,
//!   branching demo).
//! - [`cli`]: configuration parsing, output formats and run manifests for
//!   the `pilotwave` binary.
//!
//! Internal units are hbar = m = 1 everywhere except [`adequacy`], which
//! works in SI.

pub mod adequacy;
pub mod cli;
pub mod equilibrium;
pub mod error;
pub mod evolution;
pub mod fieldmodes;
pub mod grids;
pub mod guidance;
pub mod scenarios;
pub mod stats;

pub use error::{Error, Result};
