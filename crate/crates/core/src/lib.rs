//! Structured perspective regularization for structured pruning.
//!
//! - [`nnet`]: small deterministic network engine (dense, conv2d, relu,
//!   maxpool, softmax cross-entropy) with manual backpropagation.
//! - [`groups`]: prunable entities, per-layer bounds, pruning verdicts.
//! - [`spr`]: the penalty, its gradient and comparison regularizers.
//! - [`relax`]: exact and relaxed solutions of tiny indicator-variable
//!   regression problems.
//! - [`pipeline`]: train with the penalty, prune, fine-tune.
//! - [`dataio`]: synthetic generators, IDX files, normalization, augmentation.
//! - [`checkpoint`]: the binary checkpoint container.

pub mod checkpoint;
pub mod dataio;
pub mod error;
pub mod groups;
pub mod nnet;
pub mod pipeline;
pub mod relax;
pub mod seed;
pub mod spr;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
