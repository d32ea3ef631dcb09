//! Perturbation-series construction of Feynman-Kac semigroup densities for
//! stable-like jump processes, with the numerical verification harness for
//! the associated exact identities, growth bounds and two-sided heat-kernel
//! estimates at desk scale.
//!
//! The crate is organized around the objects it computes:
//!
//! * [`model`] — the process model (jump kernel, reference density,
//!   envelope constants), the perturbation functional with its decay
//!   certificate, and their symmetrizations;
//! * [`kernel`] — baseline transition densities (closed-form Cauchy,
//!   characteristic-function inversion, user tables) and the comparison
//!   envelope;
//! * [`jumpalgebra`] — exact finite-sum algebra of the discontinuous
//!   additive functional and the power-expansion identities;
//! * [`pathsim`] — seeded jump-path simulation with explicit jump records
//!   and the Monte Carlo estimators built on them;
//! * [`series`] — recursive quadrature for the perturbation terms, the
//!   singular-measure density, the Kato functional, the truncated signed
//!   series and its semigroup defect;
//! * [`ledger`] — constructive witnesses for every named constant of the
//!   growth and comparison bounds;
//! * [`verify`] — the bound-check harness with margins and witnesses;
//! * [`config`] / [`cli`] — the sectioned run configuration and the
//!   command-line front end.

pub mod cli;
pub mod config;
mod fft;
pub mod jumpalgebra;
pub mod kernel;
pub mod ledger;
pub mod model;
pub mod pathsim;
pub mod series;
pub mod verify;
