//! Whitespace tokenizer over a fixed vocabulary.

use std::collections::BTreeSet;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const EOS_ID: usize = 1;
pub const UNK_ID: usize = 2;

const SPECIALS: [&str; 3] = ["<pad>", "<eos>", "<unk>"];

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Vocabulary {
    /// Token strings ordered by id; ids are dense in `[0, len)`.
    tokens: Vec<String>,
    #[serde(skip)]
    lookup: HashMap<String, usize>,
}

impl Vocabulary {
    fn build_lookup(&mut self) {
        self.lookup = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    /// Reconstructs from a stored token list (e.g. a checkpoint header).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..3] != SPECIALS {
            return Err(Error::Validation(
                "vocabulary must start with <pad>, <eos>, <unk>".into(),
            ));
        }
        let mut v = Vocabulary {
            tokens,
            lookup: HashMap::new(),
        };
        v.build_lookup();
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id_of(&self, word: &str) -> Option<usize> {
        self.lookup.get(word).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Deterministic vocabulary over a caption corpus: specials first, then all
/// corpus words lowercased, deduplicated and sorted lexicographically.
pub fn build_vocab(corpus: &[String]) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::Input("cannot build a vocabulary from an empty corpus".into()));
    }
    let words: BTreeSet<String> = corpus
        .iter()
        .flat_map(|caption| caption.split_whitespace())
        .map(|w| w.to_lowercase())
        .collect();
    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(words);
    Vocabulary::from_tokens(tokens)
}

/// Token ids of a caption: words (truncated to `max_len - 1`), one EOS, then
/// PAD fill up to `max_len`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    /// Index of the EOS token; everything after it is PAD.
    pub eos_pos: usize,
    pub caption: String,
}

impl TokenSequence {
    /// Number of meaningful positions (words plus the EOS marker).
    pub fn valid_len(&self) -> usize {
        self.eos_pos + 1
    }
}

pub fn tokenize(caption: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenSequence> {
    if max_len < 2 {
        return Err(Error::Config(format!(
            "tokenize: max_len must be at least 2, got {max_len}"
        )));
    }
    let mut ids: Vec<usize> = caption
        .split_whitespace()
        .map(|w| vocab.id_of(&w.to_lowercase()).unwrap_or(UNK_ID))
        .take(max_len - 1)
        .collect();
    let eos_pos = ids.len();
    ids.push(EOS_ID);
    ids.resize(max_len, PAD_ID);
    Ok(TokenSequence {
        ids,
        eos_pos,
        caption: caption.to_string(),
    })
}
