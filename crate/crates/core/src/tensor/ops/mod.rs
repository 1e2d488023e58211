//! Differentiable operations, each recorded on a [`Graph`](super::Graph).

mod activation;
mod conv;
mod linalg;
mod norm;
mod shape;

pub use conv::receptive_field;
pub use norm::{BatchNormOutput, NormMode};

use crate::error::{Error, Result};

pub(crate) fn expect_rank(shape: &[usize], rank: usize, op: &str) -> Result<()> {
    if shape.len() != rank {
        return Err(Error::dim(format!("{op}: expected rank {rank}, got shape {shape:?}")));
    }
    Ok(())
}

/// Window offsets for a temporal window of `tau` frames.
pub(crate) fn window_offsets(tau: usize) -> impl Iterator<Item = isize> {
    let lo = ((tau as isize) - 1) / 2;
    (0..tau as isize).map(move |j| j - lo)
}
