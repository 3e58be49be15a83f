use thiserror::Error;

/// Errors raised by field construction, geometry checks, and solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// A source term that must be mean-free (w.r.t. the relevant volume) is not.
    #[error("source has nonzero mean {mean:.3e} (tolerance {tol:.1e}); mis-split source term")]
    NonZeroMean { mean: f64, tol: f64 },

    /// A fiberwise source term has a nonzero fiber average at some base point.
    #[error("source has nonzero fiber mean up to {max_mean:.3e} (tolerance {tol:.1e})")]
    NonZeroFiberMean { max_mean: f64, tol: f64 },

    /// A form required to be positive definite is not.
    #[error("form not positive: min eigenvalue {min_eig:.3e} at grid index {index:?}")]
    NotPositive { min_eig: f64, index: [usize; 4] },

    /// The vertical block of a would-be relatively Kähler form is not positive.
    #[error("form not relatively Kähler: min vertical coefficient {min_vertical:.3e} at grid index {index:?}")]
    NotRelativelyKahler { min_vertical: f64, index: [usize; 4] },

    /// Two fields on different grids were combined.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// The order-zero block of a metric series cannot be inverted.
    #[error("singular leading block: min |det| {min_det:.3e}")]
    SingularLeadingBlock { min_det: f64 },

    /// An iterative solver ran out of iterations.
    #[error("no convergence after {iterations} iterations, residual {residual:.3e} (target {target:.1e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        target: f64,
    },

    /// A damped step could not preserve positivity.
    #[error("positivity breakdown: margin {margin:.3e} at damping {damping:.3e}")]
    PositivityBreakdown { margin: f64, damping: f64 },

    /// The realized approximate solution is not positive for any admissible k.
    #[error("order too high: realized form not positive for any k ≤ {k_max:.0}; margins at sampled k: {margins:?}")]
    OrderTooHigh { k_max: f64, margins: Vec<(f64, f64)> },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
