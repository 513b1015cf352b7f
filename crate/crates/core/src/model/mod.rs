//! DeepFM-style CTR model: pooled embedding lookup, FM interaction, MLP,
//! logistic loss and hand-derived gradients.
//!
//! Parameters are stored as `f32`; all arithmetic runs in `f64` with a fixed
//! accumulation order, so a forward pass is bitwise reproducible.

mod backward;
mod forward;
mod metrics;
mod params;

pub use backward::{backward, backward_into, regularization_loss, DenseGradient, RowGradient, SparseGradient};
pub use forward::{
    accumulate_row, assemble, clip_probability, fm_second_order, forward, forward_gated, log_loss,
    pooled_lookup, sigmoid, slot_contribution, ForwardTrace, SlotContribution, PROB_EPS,
};
pub use metrics::{auc, evaluate_metrics, mean_log_loss, Metrics};
pub use params::{DenseLayer, DenseParams, EmbeddingTable, ModelParams, ParamSource};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("row {id} out of range for slot {slot} (vocab {vocab})")]
    IndexOutOfRange { slot: usize, id: u64, vocab: u64 },
    #[error("vector dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("feature vector has {got} slots, model has {expected}")]
    SlotMismatch { expected: usize, got: usize },
    #[error("scores and labels differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("labels contain a single class; AUC is undefined")]
    DegenerateLabels,
}
