//! Question-driven abstractive summarization.
//!
//! The pipeline reads a question and a sentence-segmented document, encodes
//! both with a shared recurrent encoder, selects relevant sentences through
//! several inference hops, and generates an answer summary with a pointer
//! generator that can copy from the question, copy from the document, or
//! write from a fixed vocabulary. Coverage penalties on both copy views
//! discourage repetition.
//!
//! Everything runs on a small self-contained autodiff engine; no external
//! numerics libraries are involved, which keeps runs bit-reproducible under
//! a fixed seed.

pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod fixtures;
pub mod generator;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod multihop;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
