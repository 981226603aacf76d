//! Dense tensors, define-by-run reverse-mode differentiation, the shared
//! LSTM cell, optimizers, finite-difference checking and parameter
//! checkpoints. No external ML framework is involved.

mod checkpoint;
mod gradcheck;
mod graph;
mod lstm;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{CheckpointError, ModelKind, ParamFile, ParamRecord, CHECKPOINT_MAGIC};
pub(crate) use checkpoint::{read_file, write_file};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{log_softmax_at, sigmoid, softmax_row, Gradients, Graph, NodeId};
pub use lstm::LstmCell;
pub use optim::{Optimizer, OptimizerKind};
pub use params::{ParamGrads, ParamId, ParamStore};
pub use tensor::Tensor;

use rand::Rng;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("index {index} out of range for bound {bound}")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("unknown parameter {0}")]
    UnknownParam(String),
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index<T: Scalar, R: Rng + ?Sized>(probs: &[T], rng: &mut R) -> usize {
    let u = T::of(rng.random::<f64>());
    let mut cum = T::zero();
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > T::zero() {
            last_positive = i;
        }
        cum += p;
        if u < cum {
            return i;
        }
    }
    last_positive
}

/// Shannon entropy in nats.
pub fn entropy<T: Scalar>(probs: &[T]) -> T {
    probs
        .iter()
        .filter(|&&p| p > T::zero())
        .map(|&p| -p * p.ln())
        .sum()
}

/// Standard normal draws as scalars.
pub fn standard_normal<T: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<T> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            T::of(v)
        })
        .collect()
}
