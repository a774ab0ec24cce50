//! Numerical toolkit for mappings of the punctured unit ball in R^n:
//! pointwise dilatations, modulus bounds for spherical rings, and
//! cavitation classification at the origin.
//!
//! The crate is organized around four layers:
//!
//! * [`mapping`] — mapping specifications, Jacobians, the built-in catalog
//!   (`identity`, `scaling`, `f1`, `f2`, `f3`, radial stretchings);
//! * [`dilatation`] — pointwise dilatations K, L, D, Q, T from a Jacobian
//!   matrix and a reference direction, with brute-force oracles;
//! * [`quadrature`] — sphere and log-radial grids, annulus integration,
//!   and classification of improper-integral limits;
//! * [`modulus`] — ring-modulus bounds, the four cavitation integrals,
//!   the cavitation classifier and related inequality checks.
//!
//! The `cavimod` binary exposes all of this behind a CLI; see [`cli`].

pub mod cli;
pub mod dilatation;
pub mod expr;
pub mod mapping;
pub mod modulus;
pub mod quadrature;
pub mod report;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Point outside the open punctured ball 0 < |x| < 1.
    #[error("point with |x| = {norm} is outside the punctured unit ball")]
    OutsideDomain { norm: f64 },

    /// An evaluation produced non-finite coordinates or matrix entries.
    #[error("non-finite value produced by `{context}`")]
    NonFinite { context: &'static str },

    /// Invalid argument (bad parameter range, non-orthogonal matrix, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Unknown catalog map name.
    #[error("unknown catalog map `{0}`")]
    UnknownMap(String),

    /// The Jacobian at this point is degenerate (det <= 0 or ill-conditioned).
    #[error("irregular point: {0}")]
    Irregular(String),

    /// Too many irregular nodes encountered while integrating.
    #[error("integration aborted: irregular node fraction {fraction:.3e} exceeds {limit:.3e}")]
    IrregularFraction { fraction: f64, limit: f64 },

    /// Expression or config parse error.
    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },

    /// Not enough data points for a limit classification.
    #[error("limit classification needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
