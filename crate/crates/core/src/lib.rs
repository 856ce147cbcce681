//! Attentional neural machine translation with discrete-lexicon-biased
//! output probabilities.
//!
//! The crate is organised as a pipeline:
//!
//! * [`corpus`]: half-width normalization, joint BPE, vocabularies and
//!   word-budget minibatching.
//! * [`align`]: IBM Model 1 lexical translation probabilities.
//! * [`autodiff`]: a small reverse-mode tape over dense vectors.
//! * [`model`]: bidirectional LSTM encoder, attentional decoder and the
//!   lexicon bias on the output softmax.
//! * [`train`]: maximum-likelihood training with ADAM and the
//!   learning-rate halving schedule, plus minimum-risk training.
//! * [`decode`]: beam search with word penalty and ensembling.
//! * [`eval`]: corpus BLEU, BLEU+1 and length ratio.
//! * [`cli`]: the `lexnmt` command-line front end.

pub mod align;
pub mod autodiff;
pub mod cli;
pub mod corpus;
pub mod decode;
mod error;
pub mod eval;
pub mod model;
pub mod train;

pub use error::{Error, Result};
