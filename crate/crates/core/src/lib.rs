//! Duet v2 passage re-ranking.
//!
//! The crate is organised bottom-up:
//!
//! - [`ndgrad`]: dense tensors with a reverse-mode tape, Adam, gradient checks.
//! - [`textpipe`]: tokenization, capped vocabulary, normalized IDF, embedding
//!   initialization and dataset readers.
//! - [`model`]: the Duet v2 scorer (local exact-match and distributed
//!   embedding sub-models joined by an MLP) and its checkpoint format.
//! - [`train`]: pairwise RankNet training, data sources and bagging.
//! - [`eval`]: candidate re-ranking, MRR@k, BM25, ensemble fusion, run files.

pub mod error;
pub mod eval;
pub mod model;
pub mod ndgrad;
pub mod rng;
pub mod textpipe;
pub mod train;

pub use error::{Error, Result};
