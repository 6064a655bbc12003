use thiserror::Error;

/// Errors raised by the shell-model library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("length mismatch: expected {expected} entries, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("shell index {index} out of range for {n_shells} shells")]
    IndexOutOfRange { index: usize, n_shells: usize },

    #[error("non-finite state at t = {time}")]
    NonFinite { time: f64 },

    #[error("shell {shell} went negative ({value:e}) beyond the clamp threshold at t = {time}")]
    ClampExceeded { shell: usize, value: f64, time: f64 },

    #[error("scheme {scheme} does not support {what}")]
    UnsupportedScheme {
        scheme: &'static str,
        what: &'static str,
    },

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("spectrum fit: {0}")]
    Spectrum(String),

    #[error("interval [{start}, {end}] lies outside the stored trajectory [{stored_start}, {stored_end}]")]
    IntervalOutOfRange {
        start: f64,
        end: f64,
        stored_start: f64,
        stored_end: f64,
    },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e}, trace {trace:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64, trace: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("vector fields live on different truncations ({left} vs {right} variables)")]
    TruncationMismatch { left: usize, right: usize },

    #[error("truncation N = {n_trunc} exceeds the symbolic limit {limit}")]
    TruncationTooLarge { n_trunc: usize, limit: usize },

    #[error("term count explosion at depth {depth}: {terms} terms (cap {cap})")]
    TermExplosion {
        depth: usize,
        terms: usize,
        cap: usize,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
