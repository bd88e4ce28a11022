//! Neural sequence labeling from scratch.
//!
//! The toolkit tags words with a window network or a convolutional sentence
//! network, trained either with a per-word softmax criterion or with a
//! sentence-level criterion that scores whole tag paths through learned
//! transition scores and decodes them with Viterbi. Word embeddings can be
//! pretrained with a pairwise ranking language model and shared across tasks.
//!
//! All gradients are written by hand; [`train::gradient_check`] compares
//! them with central finite differences.

pub mod corpus;
pub mod crf;
pub mod error;
pub mod features;
pub mod model;
pub mod net;
pub mod synth;
pub mod tagscheme;
pub mod train;

pub use error::{Error, Result};
