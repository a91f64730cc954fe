//! Stabilized explicit backward-in-time marching for 2D coupled sound and
//! heat flow.
//!
//! The scheme advances `U^{n+1} = S (I + dt G) U^n`, where `G` couples a
//! temperature `u`, a wave velocity `v` and a wave displacement `w` through an
//! elliptic operator `L`, and `S` applies an exponential spectral damper to
//! every component. With `dt < 0` the scheme marches an ill-posed dissipative
//! system backward in time; the damper quenches the explosive growth of high
//! modes at the price of a controlled smoothing error.
//!
//! Modules:
//! - [`params`]: scalar parameters, derived constants and error-bound constants.
//! - [`domain`]: the node grid on the unit square, the quarter-circle mask and
//!   extension/restriction between the region and the square.
//! - [`operator`]: the lagged nonlinear operator `L` and the block operator `G`.
//! - [`smoother`]: the Laplacian smoother synthesized with 2D sine transforms.
//! - [`marcher`]: single steps, full marches and backward/forward round trips.
//! - [`modal`]: exact per-mode solver and numerical checks of the linear theory.
//! - [`imaging`]: graymap I/O, synthetic test images and L1 metrics.
//! - [`config`]: `key = value` run configuration files.
//! - [`cli`]: the experiment driver behind the `backmarch` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod domain;
pub mod error;
pub mod imaging;
pub mod marcher;
pub mod modal;
pub mod operator;
pub mod params;
pub mod smoother;

pub use error::{Error, Result};

/// Real field on the `(n + 1) x (n + 1)` node array of the unit square,
/// indexed `[i, j]` with `x = i / n`, `y = j / n`.
pub type Field = ndarray::Array2<f64>;

/// Sum of squares in row-major order.
///
/// Each row is reduced left to right and rows are accumulated in order, so
/// the result does not depend on thread scheduling anywhere in the crate.
pub(crate) fn sum_squares(field: &Field) -> f64 {
    field
        .rows()
        .into_iter()
        .map(|row| row.iter().fold(0.0, |acc, &x| acc + x * x))
        .fold(0.0, |acc, r| acc + r)
}

pub(crate) fn max_abs(field: &Field) -> f64 {
    field.iter().fold(0.0_f64, |acc, &x| {
        if x.is_nan() || acc.is_nan() {
            f64::NAN
        } else {
            acc.max(x.abs())
        }
    })
}
