//! Desk-scale laboratory for few-shot zero-glance class unlearning.
//!
//! The pipeline: train a classifier on labelled blobs, train a generative
//! feedback network that synthesises erasure samples for the classes to
//! forget, then run a two-phase fine-tune (aggressive erasure over the
//! synthetic samples plus the few retained shots, gentle recovery over the
//! retained shots alone). Baselines, logit/representation metrics, and a
//! reproducible experiment runner round out the lab.

pub mod autodiff;
pub mod baselines;
pub mod data;
pub mod eval;
pub mod exp;
pub mod gfn;
pub mod guard;
pub mod models;
pub mod training;
pub mod unlearn;
pub mod util;

pub use autodiff::graph::{Graph, NodeId};
pub use autodiff::optim::{sgd_step, GradientMap, OptimStep, ParameterVector};
pub use autodiff::tensor::Tensor;

/// Crate-wide error type. Variants mirror the failure modes named in the
/// operation contracts (shape error, invalid label, empty input, ...).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid label {label} for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("numeric abort in {phase} at iteration {iteration}: {detail}")]
    NumericAbort {
        phase: String,
        iteration: usize,
        detail: String,
    },

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("zero-glance violation: {0}")]
    ZeroGlance(String),

    #[error("insufficient samples for class {class}: {have} present, {need} required")]
    InsufficientSamples {
        class: usize,
        have: usize,
        need: usize,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("model file error: {0}")]
    ModelFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
