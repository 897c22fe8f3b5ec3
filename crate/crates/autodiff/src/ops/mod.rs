//! Differentiable operations. Each one is an inherent method on [`Var`]
//! (see the submodules) that computes its forward value eagerly and records
//! a backward rule on the tape.
//!
//! [`Var`]: crate::Var

mod conv;
mod elementwise;
mod hist;
mod linalg;
mod norm;
mod scan;
mod select;
mod shape;
mod softmax;

pub use conv::Conv3dSpec;
pub use hist::{hard_bin, soft_bin_weights, Binning, GRAY_WEIGHTS};
pub use scan::{scan_forward, zoh, zoh_grad, ScanTrace};
pub use select::argmax_lowest;

use crate::error::{shape_err, Result};

pub(crate) fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return shape_err(op, format!("{a:?} vs {b:?}"));
    }
    Ok(())
}

pub(crate) fn as_matrix(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => shape_err(op, format!("expected a matrix, got {shape:?}")),
    }
}

/// Splits a shape into (rows, last-dim) for row-wise operations.
pub(crate) fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let cols = *shape.last().unwrap_or(&1);
    let rows = shape.iter().product::<usize>() / cols.max(1);
    (rows, cols)
}
