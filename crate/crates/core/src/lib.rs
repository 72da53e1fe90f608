//! Projection time stepping for perfect plasticity with Kelvin-Voigt viscosity
//! and a time-dependent von Mises constraint `|(sigma + p)^D| <= g`.
//!
//! Each step solves one linear SPD system for the velocity, updates a trial
//! stress explicitly, and projects it element-wise onto the constraint set.

pub mod charts;
pub mod fem;
pub mod linalg;
pub mod stepper;
pub mod tensor;

pub use tensor::SymMat;
