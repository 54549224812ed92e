//! Genotype-to-phenotype prediction from SNP letter sequences.
//!
//! The pipeline collapses raw SNP letters to `{A, T, C, G, X}`, cuts the
//! result into non-overlapping k-mer tokens, randomly masks tokens during
//! training, and feeds them through a small pre-norm transformer encoder
//! with a flatten + MLP head for classification or regression.
//!
//! Modules, bottom-up:
//! - [`codec`]: SNP alphabet, pair coding, preprocessing and sequence files
//! - [`tokenizer`]: k-mer ids, masking, vocabulary
//! - [`numeric`]: tensors, reverse-mode gradients, Adam
//! - [`model`]: the encoder, heads and losses
//! - [`pipeline`]: datasets, folds, training, metrics, synthetic data,
//!   ridge baseline and checkpoints

pub mod codec;
pub mod error;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod tokenizer;

pub use error::{Error, Result};
