//! Named entity recognition for short, noisy text with attentive semantic
//! augmentation.
//!
//! Each token is enriched with its most similar words from a pre-trained
//! embedding space. A relative-position transformer encodes the sentence,
//! an attention over the similar words produces an augmented vector, a gate
//! balances the two, and a linear-chain CRF decodes BIOES tags.

pub mod augment;
pub mod autodiff;
pub mod corpus;
pub mod crf;
pub mod embeddings;
pub mod encoder;
pub mod error;
pub mod gate;
pub mod train_eval;

pub use error::{Error, Result};
