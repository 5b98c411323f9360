//! Modeling toolkit for categorical career sequences.
//!
//! A career is a year-indexed sequence of occupations with categorical
//! covariates. This crate provides:
//!
//! - [`corpus`]: the data model, JSONL ingestion, vocabulary construction,
//!   deterministic splits, and synthetic-corpus generators used as test
//!   oracles.
//! - [`numerics`]: the numerical primitives everything is built on
//!   (masked log-softmax, GELU, layer norm, sinusoidal positions, Adam with
//!   a warmup/inverse-sqrt schedule, finite-difference gradient checking).
//! - [`models`]: the shared two-stage/one-stage prediction heads and the
//!   non-transformer baselines (smoothed Markov models, multinomial
//!   regression over handcrafted history features, bag-of-jobs).
//! - [`career`]: the transformer occupation model with full forward and
//!   backward passes.
//! - [`training`]: token-budgeted batching, the optimization loop with
//!   best-validation checkpoint selection, the checkpoint container, and
//!   pretrain-to-finetune parameter transfer.
//! - [`evaluation`]: held-out perplexity with transition-category
//!   decomposition, binary perplexity/AUC, and Monte-Carlo forecasting.
//! - [`rationale`]: job dropout and greedy rationalization of switch
//!   predictions.
//!
//! All randomness is seeded and all reductions run in a fixed order, so
//! training, evaluation, and forecasting are bit-reproducible for a given
//! seed on one platform.

pub mod career;
pub mod corpus;
pub mod evaluation;
pub mod error;
pub mod models;
pub mod numerics;
mod util;

pub use corpus::{CareerSequence, Corpus, SyntheticSpec, Vocabulary};
pub use error::{Error, Result};
pub use models::{HeadKind, Model};
