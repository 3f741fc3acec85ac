//! Pseudo-spectral simulation and verification toolkit for a cut-off,
//! symmetrized stochastic compressible barotropic Navier-Stokes system on
//! the flat torus `T^N = (-pi, pi]^N`, `N = 1, 2, 3`.
//!
//! The unknowns are the symmetrized density `r` (a rescaled power of the
//! physical density `rho`) and the velocity `u`.  The drift, viscous and
//! noise terms are all multiplied by a smooth cut-off `phi(|u|_{2,inf})`
//! so that trajectories are globally defined while local solutions are
//! tracked up to explicit stopping times.
//!
//! Layer map:
//!
//! * [`spectral`]  - grids, trigonometric fields, Sobolev/sup norms,
//!   Galerkin projection, dealiasing, Moser-type inequality checks.
//! * [`fluid`]     - barotropic transforms, viscous stress, cut-off.
//! * [`noise`]     - truncated cylindrical Wiener process and the
//!   state-dependent diffusion fields with hypothesis validation.
//! * [`integrator`]- semi-Lagrangian transport + Euler-Maruyama momentum
//!   stepping, Picard fixed-point mode, trajectory driver.
//! * [`stopping`]  - stopping times, shell classification, maximal
//!   continuation across a cut-off schedule.
//! * [`diagnostics`] - commutator norms, Ito residuals, maximum-principle
//!   audits, uniqueness and mesh-comparison experiments, energy moments.
//! * [`config`], [`snapshot`], [`trace`], [`driver`] - run configuration,
//!   binary state snapshots, CSV traces, experiment drivers.

mod error;
pub mod config;
pub mod constants;
pub mod diagnostics;
pub mod driver;
pub mod fluid;
pub mod integrator;
pub mod noise;
pub mod snapshot;
pub mod spectral;
pub mod stopping;
pub mod streams;
pub mod trace;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
