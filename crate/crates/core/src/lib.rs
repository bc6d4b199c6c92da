//! Document embeddings learned from text and metadata against LDA topic
//! targets, with exemplar-based nearest-neighbour classification.

pub mod classify;
pub mod cli;
pub mod corpus;
pub mod encoder;
mod error;
pub mod nnkit;
pub mod objective;
pub mod pipeline;
pub mod seeds;
pub mod synthetic;
pub mod topics;

pub use error::{Error, Result};
