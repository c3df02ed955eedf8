//! Simulation and numerical-verification toolkit for an inhomogeneous
//! exponential jump particle system on the half line.
//!
//! The crate is organized in layers:
//!
//! - [`qspecial`]: q-Pochhammer symbols and the phi_0..phi_3 series, the
//!   numerical bedrock of everything else.
//! - [`model`]: the environment (piecewise-constant speed field, roadblocks,
//!   model parameters) and particle configurations.
//! - [`limitshape`]: closed-form macroscopic quantities: edge, critical
//!   point, limit shape, phase classification, dispersion constants, and the
//!   hydrodynamic PDE residual.
//! - [`simulator`]: exact stochastic simulation of the continuous-space jump
//!   model and its discrete and half-continuous vertex-model relatives.
//! - [`stationary`]: translation-invariant stationary measures, their
//!   samplers, and balance-identity checks.
//! - [`distributions`]: Tracy-Widom, BBP, and finite-GUE limit laws.
//! - [`fredholm`]: pre-limit Fredholm determinant and q-moment formulas on
//!   complex contours.
//! - [`experiments`]: orchestrated desk-scale experiments tying simulation
//!   to the exact formulas.

// Guards of the form `!(x > 0.0)` are deliberate: they reject NaN along
// with the out-of-range values, which `x <= 0.0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distributions;
pub mod error;
pub mod experiments;
pub mod fredholm;
pub mod limitshape;
pub mod model;
pub mod qspecial;
pub mod simulator;
pub mod stationary;

pub use error::{Error, Result};
