//! Confusion network system combination for machine translation.
//!
//! The crate builds confusion networks from the outputs of several MT
//! systems, extracts sentence-BLEU optimal oracle paths from them, trains a
//! small feedforward network that votes locally between the systems at each
//! slot, and decodes with a linear model whose weights are tuned by MERT.
//!
//! Module map:
//!
//! - [`corpus`]: parallel system outputs and references.
//! - [`metrics`]: smoothed sentence BLEU, corpus BLEU, TER and significance.
//! - [`align`]: primary selection and incremental alignment into networks.
//! - [`oracle`]: UNK simplification and k-best oracle path extraction.
//! - [`nnvote`]: training examples and the local voting network.
//! - [`wordclass`]: exchange clustering for the network's input/output layers.
//! - [`decode`]: trigram LM, arc features and exact n-best decoding.
//! - [`tune`]: MERT line search and the decode/tune outer loop.
//! - [`synth`]: synthetic systems with planted minority-correct positions.
//! - [`analysis`] and [`pipeline`]: reports and end-to-end orchestration.

pub mod align;
pub mod analysis;
pub mod corpus;
pub mod decode;
mod error;
pub mod metrics;
pub mod nnvote;
pub mod oracle;
pub mod pipeline;
pub mod synth;
pub mod tune;
pub mod wordclass;

pub use error::{Error, Result};

/// Epsilon marker used in network dumps and NN contexts.
pub const EPS: &str = "<eps>";
/// Label given to arcs whose word never occurs in the reference.
pub const UNK: &str = "UNK";
/// Sentence-start padding token.
pub const BOS: &str = "<s>";
/// Sentence-end token of the language model.
pub const EOS: &str = "</s>";
/// Unknown-word token of the language model and the voting network.
pub const UNKNOWN: &str = "<unk>";
