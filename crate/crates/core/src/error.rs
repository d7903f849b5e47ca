use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("quadrature for the Engquist-Osher flux failed at (x={x}, u={u}, v={v})")]
    Quadrature { x: f64, u: f64, v: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("time step {dt} violates the monotonicity bound: {bound}")]
    Cfl { dt: f64, bound: String },

    #[error("non-finite value in cell {cell} after step {step}")]
    BlowUp { step: usize, cell: usize },

    #[error("zero-mean premise violated at step {step}: dx*sum(u) = {mean:e}")]
    MeanDrift { step: usize, mean: f64 },

    #[error("invariant `{check}` violated at step {step}: {detail}")]
    Invariant { check: String, step: usize, detail: String },

    #[error("run with N={n} failed: {source}")]
    Resolution {
        n: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }
}
