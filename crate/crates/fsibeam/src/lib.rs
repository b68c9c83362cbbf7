//! Spectral Galerkin simulator for a perfectly elastic beam coupled to an
//! incompressible viscous fluid, posed on a fixed reference strip through an
//! explicit change of coordinates.
//!
//! Pipeline: [`geometry`] carries the coordinate-change algebra, [`basis`]
//! builds the coupled velocity/deformation mode pairs, [`assembly`] reduces
//! the weak form to dense operators, [`integrator`] advances the coupled
//! system with an implicit midpoint rule and per-step fixed-point sweeps,
//! [`diagnostics`] tracks conserved quantities and compatibility residuals,
//! and [`io`] handles configs, time series, snapshots, and checkpoints.

pub mod assembly;
pub mod basis;
pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod integrator;
pub mod io;
pub mod quadrature;
pub mod verify;
