//! Joint multilingual knowledge-graph completion and entity alignment.
//!
//! Two relation-aware GNN encoders are trained in alternation: a completion
//! encoder scored with a layer-summed TransE objective, and an alignment
//! encoder that fuses the completion embeddings at every layer, trained with
//! a cosine margin loss. Between epochs the alignment seed set is enlarged by
//! an entropy-driven budget and triples are copied across aligned KGs.

pub mod alignment;
pub mod completion;
pub mod diff;
pub mod entr;
pub mod eval;
pub mod kgdata;
pub mod rgnn;
pub mod rng;
pub mod synth;
pub mod train;

mod error;

pub use error::{Error, Result};
