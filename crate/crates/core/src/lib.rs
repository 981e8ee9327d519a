//! Numerics for the small-deflection limit of the d-cone.
//!
//! * [`grid`]: periodic grids, finite differences and quadrature.
//! * [`energy`]: the limit functional, the isometry constraint and the
//!   Euler–Lagrange residual.
//! * [`obstacle`]: constrained minimization with the obstacle `w ≥ 1`.
//! * [`folds`]: closed-form fold profiles and the transcendental functions
//!   that select admissible fold widths.
//! * [`recovery`]: curves on the sphere whose rescaled bending energy
//!   converges to the limit functional.

pub mod banded;
pub mod energy;
pub mod fit;
pub mod folds;
pub mod grid;
pub mod obstacle;
pub mod recovery;

pub use energy::{constraint, el_residual, energy, gradients, EnergyReport};
pub use grid::{deriv, integrate, make_grid, GridError, PeriodicField, PeriodicGrid};
