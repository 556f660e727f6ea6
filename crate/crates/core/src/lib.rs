//! State estimation for power transmission grids with nonconvex first-order
//! solvers on the factored semidefinite formulation.
//!
//! The pipeline is: parse a case into a [`grid::Network`], lay out a
//! [`measurement::MeasurementPlan`], populate it from a true state, then
//! estimate the voltages with one of the [`solvers`] or [`robust`] routines.

pub mod analysis;
pub mod grid;
pub mod harness;
pub mod measurement;
pub mod robust;
pub mod solvers;
pub mod sparse;
