//! Dense tensors, reverse-mode gradients and a finite-difference checker.
//!
//! Every differentiable computation in the crate is assembled from the
//! operations on [`Var`]. Values are `f64` throughout.

mod gradcheck;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use gradcheck::{finite_difference_check, DEFAULT_FD_STEP};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{
    attention, attention_weights, interleave, softmax_rows, Gradients, Tape, Var, DEGENERATE_NORM,
};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("degenerate vector (norm {norm:e} is below 1e-12)")]
    Degenerate { norm: f64 },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("{0}")]
    Contract(String),
}

/// Cosine of the angle between two equally long vectors.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, NumError> {
    if u.len() != v.len() {
        return Err(NumError::Shape {
            op: "cosine_similarity",
            left: vec![u.len()],
            right: vec![v.len()],
        });
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for norm in [nu, nv] {
        if norm < DEGENERATE_NORM {
            return Err(NumError::Degenerate { norm });
        }
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

impl<'t> Var<'t> {
    /// Differentiable cosine similarity of two vectors, as a scalar node.
    pub fn cosine_similarity(self, other: Var<'t>) -> Result<Var<'t>, NumError> {
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(NumError::Shape {
                op: "cosine_similarity",
                left: a,
                right: b,
            });
        }
        self.normalize_rows()?
            .mul(other.normalize_rows()?)?
            .sum()
    }

    /// Pairwise cosine similarities between the rows of two matrices:
    /// `out[i][j] = cos(self_i, other_j)`.
    pub fn cosine_matrix(self, other: Var<'t>) -> Result<Var<'t>, NumError> {
        self.normalize_rows()?
            .matmul(other.normalize_rows()?.transpose()?)
    }
}
