//! Explanation and consequence generation: vocabulary, teacher-forced LSTM
//! training and greedy decoding.

mod lstm;
mod vocab;

pub use lstm::{Decoder, DecoderPass, Sentence};
pub use vocab::{tokenize, TokenId, Vocabulary, BOS, EOS, PAD, UNK};

/// Default generation limit, about 2.5 times a typical sentence length.
pub const DEFAULT_MAX_LEN: usize = 20;
