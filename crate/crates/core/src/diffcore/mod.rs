//! Dense `f64` matrices and feed-forward ReLU networks with exact reverse-mode gradients.
//!
//! Batches are row-major with one sample per row. Networks apply ReLU on every hidden layer
//! and the identity on the output layer; all second derivatives with respect to the inputs
//! therefore vanish away from activation boundaries.

mod matrix;
mod mlp;
mod optim;

pub use matrix::MatrixF64;
pub use mlp::{ForwardTrace, GradPack, MlpNet};
pub use optim::{apply_scalar_update, apply_update, Direction, OptKind, OptState};

/// `Σ a_i b_i` over two flat parameter vectors.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm of a flat vector.
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
