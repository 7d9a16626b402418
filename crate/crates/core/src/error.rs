// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the numerical core and its I/O layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid axis {axis} has {got} points, needs at least {min}")]
    DimensionTooSmall { axis: usize, got: usize, min: usize },

    #[error("side length L{axis} must be positive and finite, got {value}")]
    InvalidLength { axis: usize, value: f64 },

    #[error("field lives on a different grid than the geometry")]
    GridMismatch,

    #[error("field has {got} values, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("{field} is not symmetric at point {index}: [{a}][{b}] differs from [{b}][{a}]")]
    NotSymmetric {
        field: &'static str,
        index: usize,
        a: usize,
        b: usize,
    },

    #[error("{what} must be strictly positive (found {value} at index {index})")]
    NonPositive {
        what: &'static str,
        index: usize,
        value: f64,
    },

    #[error("conformal factor too large (4*max|u| = {0:.1} > 700): flow diverged")]
    Overflow(f64),

    #[error("field is constant: the P^(4,3) quadratic form vanishes")]
    ConstantField,

    #[error("time step fell below dt_min = {dt_min:e} without an energy-decreasing step")]
    StepUnderflow { dt_min: f64 },

    #[error(
        "linear solver did not converge: {iterations} iterations, relative residual {residual:e}"
    )]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("NaN encountered in conjugate gradient at iteration {0}")]
    SolverNaN(usize),

    #[error("time step {dt:e} too large for the Q-evolution check (needs dt <= 1e-3)")]
    StepTooLarge { dt: f64 },

    #[error("background violates a flow hypothesis: {0}")]
    Hypothesis(String),

    #[error("{path}:{line}: {message}")]
    Config {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("snapshot format: {0}")]
    Snapshot(String),

    #[error("malformed diagnostics CSV: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
