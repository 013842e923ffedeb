//! Crate-wide error type.
//!
//! One enum covers every failure mode so the CLI can map any library error to
//! a diagnostic and a nonzero exit status without intermediate conversions.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Every error the library can produce.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimension requirements violated (e.g. at least as many variables as
    /// constraints are required, vector lengths must match the instance).
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Constraint matrix does not have full row rank.
    #[error("rank error: constraint matrix has rank {rank}, need full row rank {rows}")]
    Rank { rank: usize, rows: usize },

    /// A utility's curvature violates strict concavity.
    #[error("curvature error: {0}")]
    Curvature(String),

    /// The KKT linear system is singular.
    #[error("KKT system is singular")]
    SingularKkt,

    /// Newton iteration failed to reach the residual tolerance.
    #[error("Newton did not converge: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { iterations: usize, residual: f64 },

    /// A non-finite value (NaN/inf) appeared where finite arithmetic is required.
    #[error("non-finite value encountered in {0}")]
    Numeric(&'static str),

    /// An operation restricted to quadratic utilities was called on a general instance.
    #[error("operation requires quadratic utilities")]
    NotQuadratic,

    /// The PD map is not a contraction (spectral radius at or above one).
    #[error("not contractive: spectral radius {spectral_radius}")]
    NotContractive { spectral_radius: f64 },

    /// Invalid parameter value.
    #[error("parameter error: {0}")]
    Param(String),

    /// A value left the interval the zoom-in codec can represent at this step.
    #[error(
        "interval violation at step {step}: value {value} is {distance} from center {center}, \
         radius {radius} (contraction assumption broken)"
    )]
    IntervalViolation {
        step: usize,
        value: f64,
        center: f64,
        distance: f64,
        radius: f64,
    },

    /// A received symbol does not fit the decoder's current alphabet.
    #[error("decoder desync at step {step}: symbol index {index} outside alphabet of size {alphabet}")]
    Desync {
        step: usize,
        index: u32,
        alphabet: u64,
    },

    /// Rate summary requested from a ledger with no recorded steps.
    #[error("rate ledger is empty over the requested horizon")]
    EmptyLedger,

    /// The lattice transformation matrix is singular.
    #[error("lattice transformation matrix is singular")]
    SingularT,

    /// A bound formula was evaluated outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A structured input file failed to parse.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Underlying I/O failure.
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    /// Aggregated trial failures from a Monte Carlo run.
    #[error("{failed} of {total} trials failed; first: {first}")]
    TrialFailures {
        failed: usize,
        total: usize,
        first: Box<Error>,
    },
}
