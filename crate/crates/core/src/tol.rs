//! Numerical thresholds used across the crate.
//!
//! Everything here is an f64 grid computation on band-limited data, so most
//! identities hold to a small multiple of machine epsilon; the looser values
//! cover iterative solvers and accumulated products.

/// A field claimed to be real may carry this much imaginary part per sample.
pub const REAL_IMAG: f64 = 1e-13;

/// Mean-zero preconditions on elliptic source terms are checked to this.
pub const MEAN_ZERO: f64 = 1e-11;

/// Weighted-mean preconditions for the operator solves (`solve_F`).
pub const WEIGHTED_MEAN_ZERO: f64 = 1e-10;

/// Default sup-norm residual for iterative linear solves.
pub const SOLVER_RESIDUAL: f64 = 1e-10;

/// A Hermitian coefficient matrix with min eigenvalue below this is
/// reported as not positive.
pub const POSITIVITY: f64 = 1e-9;

/// Max allowed spread of the fiberwise constant c_b over base points
/// for closed inputs.
pub const CB_DEVIATION: f64 = 1e-10;

/// Slope-margin threshold below which a pair is declared not J-nef;
/// absorbs quadrature noise.
pub const JNEF_MARGIN: f64 = -1e-10;

/// Default sup-norm residual target for the Newton completion.
pub const NEWTON_RESIDUAL: f64 = 1e-9;
