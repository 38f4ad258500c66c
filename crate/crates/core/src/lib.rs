//! Attention encoder-decoder for headline generation with a source-side
//! prediction head.
//!
//! The crate is self-contained: a small reverse-mode autodiff engine drives a
//! bidirectional LSTM encoder and an input-feeding attention decoder with two
//! softmax heads (next target token, and a source-content head trained to
//! reconstruct the input bag of words). Training, beam-search decoding,
//! ROUGE scoring, and alignment diagnostics all build on those pieces.

pub mod beam;
pub mod checkpoint;
pub mod diagnostics;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod rouge;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
