//! Word-level vocabulary with reserved control tokens.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::Corpus;
use crate::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const MASK_ID: usize = 2;
pub const CLS_ID: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<mask>", "<cls>"];

/// Token-to-id map with ids contiguous from 0 and the four reserved tokens
/// pinned to ids 0..=3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    by_token: BTreeMap<String, usize>,
    by_id: Vec<String>,
}

impl Vocab {
    /// Rebuild from an ordered token list (line number = id), as stored in a
    /// vocabulary file. The first four entries must be the reserved tokens.
    pub fn from_ordered_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() {
            return Err(Error::InvalidConfig(alloc::format!(
                "vocabulary needs at least the {} reserved tokens, got {}",
                RESERVED.len(),
                tokens.len()
            )));
        }
        for (i, expected) in RESERVED.iter().enumerate() {
            if tokens[i] != *expected {
                return Err(Error::InvalidConfig(alloc::format!(
                    "reserved token slot {i} holds '{}', expected '{expected}'",
                    tokens[i]
                )));
            }
        }
        let mut by_token = BTreeMap::new();
        for (id, token) in tokens.iter().enumerate() {
            if by_token.insert(token.clone(), id).is_some() {
                return Err(Error::InvalidConfig(alloc::format!(
                    "duplicate vocabulary token '{token}'"
                )));
            }
        }
        Ok(Self {
            by_token,
            by_id: tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved tokens are always present
    }

    /// Id for a token, falling back to UNK.
    pub fn id(&self, token: &str) -> usize {
        self.by_token.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.by_id.get(id).map(|s| s.as_str())
    }

    /// Tokens in id order, one per line in the file format.
    pub fn ordered_tokens(&self) -> &[String] {
        &self.by_id
    }
}

/// Count whitespace-split lowercase words on both sides of every example
/// (sides that are identical count once, so a zero-noise channel does not
/// double every frequency), keep those with frequency >= `min_count`, and
/// order them by frequency descending then lexicographic, after the four
/// reserved tokens.
pub fn build_vocab(corpus: &Corpus, min_count: usize) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for ex in corpus.examples() {
        let mut sides = alloc::vec![&ex.clean];
        if ex.noisy != ex.clean {
            sides.push(&ex.noisy);
        }
        for text in sides {
            for word in text.split_whitespace() {
                let word = word.to_lowercase();
                if RESERVED.contains(&word.as_str()) {
                    continue;
                }
                *counts.entry(word).or_insert(0) += 1;
            }
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count.max(1))
        .collect();
    kept.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));

    let mut by_id: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    by_id.extend(kept.into_iter().map(|(t, _)| t));
    Vocab::from_ordered_tokens(by_id)
}

/// `[CLS]` followed by lowercase word ids (UNK for out-of-vocabulary),
/// truncated to `max_len`. No padding at this stage.
pub fn tokenize(text: &str, vocab: &Vocab, max_len: usize) -> Vec<usize> {
    assert!(max_len >= 2, "max_len must leave room beyond [CLS]");
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS_ID);
    for word in text.split_whitespace() {
        if ids.len() == max_len {
            break;
        }
        ids.push(vocab.id(&word.to_lowercase()));
    }
    ids
}
