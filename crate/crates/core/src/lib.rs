//! Retrieval-augmented image captioning at desk scale.
//!
//! A caption [`datastore`] is searched with exact or inverted-file
//! [`vector_index`]es; the retrieved captions fill a fixed [`prompt`]; a
//! frozen toy encoder/decoder [`model`] whose only trainable weights are
//! its cross-attention layers is fitted by [`training`] and scored by
//! [`evaluation`]. [`synth`] generates topic-structured corpora for
//! experiments.

pub mod caption;
pub mod cli;
pub mod datastore;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod prompt;
pub mod rng;
pub mod synth;
pub mod tokenizer;
pub mod training;
pub mod vector_index;

pub use error::{Error, Result};
