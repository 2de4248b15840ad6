//! Affect-aware neural response generation at desk scale.
//!
//! * [`lexicon`]: VAD dictionary, lemmatization and affect-space arithmetic
//! * [`corpus`]: tokenization, vocabulary, prompt/response pairs, batching
//! * [`tensor`]: dense matrices, reverse-mode autodiff, Adam, gradient checking
//! * [`model`] / [`checkpoint`]: the LSTM encoder-decoder and its on-disk format
//! * [`losses`]: XENT, DMIN, DMAX, AC objectives and two-phase training
//! * [`decoding`]: greedy, beam search and affectively diverse beam search
//! * [`eval`]: affect-centric automatic metrics

pub mod checkpoint;
pub mod corpus;
pub mod decoding;
pub mod error;
pub mod eval;
pub mod lexicon;
pub mod losses;
pub mod model;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
