//! Joint abstractive summarization and dependency parsing.
//!
//! A single decoder emits an interleaved stream of `GEN(w)`, `REDUCE-L` and
//! `REDUCE-R` operations. Reading off the generated words yields the summary;
//! replaying the reductions yields its unlabeled dependency tree.

pub mod autodiff;
pub mod batching;
pub mod cli;
pub mod corpus;
pub mod decoding;
pub mod metrics;
pub mod model;
pub mod training;
pub mod transition;
