//! Paired-transcript corpus: synthetic generation, noise channel,
//! vocabulary, tokenization, MLM masking, and pair-aligned batching.

mod batch;
mod noise;
mod synth;
mod vocab;

pub use batch::{make_batches, mask_rows, mask_tokens, Batch, MaskTarget, TokenRows};
pub use noise::{apply_asr_noise, NoiseConfig};
pub use synth::{max_classes, synthesize_corpus};
pub use vocab::{build_vocab, tokenize, Vocab, CLS_ID, MASK_ID, PAD_ID, UNK_ID};

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Result};

/// One clean transcript, its noisy counterpart, and an intent label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairedExample {
    pub id: u64,
    pub clean: String,
    pub noisy: String,
    pub label: usize,
}

/// An immutable collection of paired examples with a fixed label schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    examples: Vec<PairedExample>,
    num_classes: usize,
    class_names: Vec<String>,
}

impl Corpus {
    /// Validates ids unique, labels in range, clean sides nonempty, and one
    /// class name per class.
    pub fn new(
        examples: Vec<PairedExample>,
        num_classes: usize,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if num_classes == 0 {
            return Err(Error::InvalidConfig("num_classes must be positive".into()));
        }
        if class_names.len() != num_classes {
            return Err(Error::InvalidConfig(alloc::format!(
                "{} class names for {} classes",
                class_names.len(),
                num_classes
            )));
        }
        let mut seen = BTreeSet::new();
        for ex in &examples {
            if !seen.insert(ex.id) {
                return Err(Error::InvalidConfig(alloc::format!(
                    "duplicate example id {}",
                    ex.id
                )));
            }
            if ex.label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: ex.label,
                    num_classes,
                });
            }
            if ex.clean.is_empty() {
                return Err(Error::InvalidConfig(alloc::format!(
                    "example {} has an empty clean transcript",
                    ex.id
                )));
            }
        }
        Ok(Self {
            examples,
            num_classes,
            class_names,
        })
    }

    pub fn examples(&self) -> &[PairedExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn ex(id: u64, label: usize) -> PairedExample {
        PairedExample {
            id,
            clean: "go".to_string(),
            noisy: "go".to_string(),
            label,
        }
    }

    #[test]
    fn corpus_validation() {
        let names = vec!["a".to_string(), "b".to_string()];
        assert!(Corpus::new(vec![ex(0, 0), ex(1, 1)], 2, names.clone()).is_ok());
        assert_eq!(Corpus::new(vec![], 2, names.clone()), Err(Error::EmptyCorpus));
        assert!(Corpus::new(vec![ex(0, 0), ex(0, 1)], 2, names.clone()).is_err());
        assert_eq!(
            Corpus::new(vec![ex(0, 2)], 2, names.clone()),
            Err(Error::LabelOutOfRange {
                label: 2,
                num_classes: 2
            })
        );
        assert!(Corpus::new(vec![ex(0, 0)], 2, vec!["a".to_string()]).is_err());
    }
}
