//! Minimal dense numeric core: tensors, a reverse-mode graph, the Adam
//! optimizer, gradient clipping and a finite-difference checker.

mod activation;
mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

use rand::SeedableRng;

pub use activation::{activate, gelu, relu, sigmoid, silu, softplus, Activation};
pub use gradcheck::grad_check;
pub use graph::{bce_value, Graph, OpKind, ScanMode, Var, BCE_EPS, NORM_EPS};
pub use optim::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use params::{Gradients, ParamEntry, ParamId, ParamStore};
pub use tensor::{DType, Scalar, Tensor};

/// Seedable counter-based generator used for every random draw.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("shape error in {op}: {detail}")]
pub struct ShapeError {
    pub op: &'static str,
    pub detail: String,
}

impl ShapeError {
    pub fn new(op: &'static str, detail: String) -> Self {
        Self { op, detail }
    }
}

/// Mean binary cross-entropy of clamped probabilities.
pub fn bce_loss<T: Scalar>(probs: &[T], labels: &[T]) -> Result<T, ShapeError> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(ShapeError::new(
            "bce_loss",
            format!("{} probabilities vs {} labels", probs.len(), labels.len()),
        ));
    }
    Ok(bce_value(probs, labels))
}
