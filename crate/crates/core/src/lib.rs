//! Numerical study of the J-equation Λ_ωχ = c on a model torus fibration.
//!
//! The total space is a product of two unit-square complex tori fibered over
//! the base torus. The crate provides:
//!
//! * spectral field arithmetic on the 4-D product grid ([`field`], [`modes`]),
//! * real (1,1)-forms as Hermitian coefficient fields ([`forms`]),
//! * the vertical–horizontal splitting and fiber integration ([`fibration`]),
//! * the linearized operator F and its elliptic solves ([`jlinear`]),
//! * truncated power series in ε = 1/k for the adiabatic family
//!   ω_k = ω_X + kω_B ([`eps`]),
//! * the order-r approximate solution construction ([`adiabatic`]),
//! * a damped Newton completion to a genuine solution ([`newton`]),
//! * slope inequalities and the converse-direction audit ([`jnef`]),
//! * experiment configuration, caching, and reports ([`config`], [`cache`]).

pub mod adiabatic;
pub mod cache;
pub mod config;
pub mod eps;
pub mod error;
pub mod field;
pub mod fibration;
pub mod forms;
pub mod jlinear;
pub mod jnef;
pub mod modes;
pub mod newton;
pub mod tol;

pub use error::{Error, Result};
