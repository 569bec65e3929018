//! Dual momentum contrast for aligning sentence representations of two
//! languages in one space, with a toy trainable encoder, a synthetic
//! bilingual world with exact ground truth, and the downstream evaluation
//! suite (retrieval, margin-based bitext mining, STS correlation).

// `!(x > 0.0)` is used on purpose so NaN lands in the error branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod formats;
pub mod moco;
pub mod numerics;
pub mod trainer;

pub use encoder::{encode, encode_backward, encode_batch, EncoderParams, PoolingMode, TokenSequence};
pub use error::{Error, Result};
pub use moco::{DualMocoState, LossValue, MemoryQueue, MomentumEncoder};
pub use numerics::{DenseMatrix, DenseVector, EmbeddingVector};
pub use trainer::{train, TrainConfig, TrainOutcome};
