//! Core library for thermodynamic Cucker-Smale flocking simulations.
//!
//! The crate is layered bottom-up:
//!
//! * [`special_functions`]: modified Bessel functions of the second kind and
//!   the tail integral they feed, evaluated from the defining integral with a
//!   large-argument series fallback.
//! * [`gas_model`]: Synge-type energy closures H(gamma) per atomicity, their
//!   derivatives, thermodynamic state, Lorentz kinematics, and the
//!   relativistic-to-classical error term.
//! * [`kernels`]: communication weights phi/zeta with validation and the
//!   min/max statistics the flocking estimates consume.
//! * [`dynamics`]: the N-particle right-hand sides (classical and
//!   relativistic), frame normalization, and fixed/adaptive integrators.
//! * [`analysis`]: conserved quantities, temperature bounds, asymptotic
//!   limits, regime constants, envelope checks, and decay-rate fits.

pub mod analysis;
pub mod dynamics;
pub mod gas_model;
pub mod kernels;
pub mod special_functions;
