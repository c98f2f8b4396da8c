//! Closed-loop shape control of a pneumatically actuated membrane.
//!
//! The crate is organized around one control loop: a black-box [`plant`]
//! maps chamber pressures to an observed surface, [`bspline`] fits a smooth
//! patch to that observation and resamples it, [`registration`] keeps the
//! target mesh posed against the samples, [`objective`] scores the shape
//! approximation error, and [`solver`] drives the pressures with a hybrid
//! of finite-difference gradient descent and Broyden quasi-Newton steps.

pub mod bspline;
pub mod geom;
pub mod objective;
pub mod plant;
pub mod registration;
pub mod solver;
