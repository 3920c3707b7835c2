use super::tokenize::tokenize;
use super::vocab::{Vocabulary, PAD_ID};

/// Maximum query length in tokens.
pub const QUERY_CAP: usize = 20;
/// Maximum passage length in tokens.
pub const PASSAGE_CAP: usize = 200;

/// A trimmed, padded token sequence. Positions `>= len()` hold PAD; the
/// original token strings are kept for exact matching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermSequence {
    tokens: Vec<String>,
    ids: Vec<u32>,
}

impl TermSequence {
    /// True length.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.ids.len()
    }

    /// Ids for every position, PAD-filled to capacity.
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, pos: usize) -> Option<&str> {
        self.tokens.get(pos).map(String::as_str)
    }
}

/// Tokenizes `text`, keeps the first `capacity` tokens, maps
/// out-of-vocabulary tokens to UNK and pads with PAD.
pub fn encode(text: &str, capacity: usize, vocab: &Vocabulary) -> TermSequence {
    let mut tokens = tokenize(text);
    tokens.truncate(capacity);
    encode_tokens(tokens, capacity, vocab)
}

pub fn encode_tokens(mut tokens: Vec<String>, capacity: usize, vocab: &Vocabulary) -> TermSequence {
    tokens.truncate(capacity);
    let mut ids: Vec<u32> = tokens.iter().map(|t| vocab.id(t)).collect();
    ids.resize(capacity, PAD_ID);
    TermSequence { tokens, ids }
}
