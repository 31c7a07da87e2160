//! Character- and word-level corruption simulating speech-recognition errors.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::{Error, Result};

/// Corruption rates for the simulated recognition channel. Validated at
/// construction so the application functions stay infallible.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    char_sub_rate: f64,
    char_del_rate: f64,
    char_ins_rate: f64,
    word_confusion_rate: f64,
    confusion_table: BTreeMap<String, Vec<String>>,
    label_flip_rate: f64,
}

impl NoiseConfig {
    pub fn new(
        char_sub_rate: f64,
        char_del_rate: f64,
        char_ins_rate: f64,
        word_confusion_rate: f64,
        confusion_table: BTreeMap<String, Vec<String>>,
        label_flip_rate: f64,
    ) -> Result<Self> {
        for (name, rate) in [
            ("char_sub_rate", char_sub_rate),
            ("char_del_rate", char_del_rate),
            ("char_ins_rate", char_ins_rate),
            ("word_confusion_rate", word_confusion_rate),
            ("label_flip_rate", label_flip_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::InvalidConfig(alloc::format!(
                    "{name} = {rate} outside [0, 1]"
                )));
            }
        }
        let char_total = char_sub_rate + char_del_rate + char_ins_rate;
        if char_total > 1.0 {
            return Err(Error::InvalidConfig(alloc::format!(
                "character rates sum to {char_total} > 1"
            )));
        }
        for (word, subs) in &confusion_table {
            if subs.is_empty() {
                return Err(Error::InvalidConfig(alloc::format!(
                    "confusion entry for '{word}' has no replacements"
                )));
            }
        }
        Ok(Self {
            char_sub_rate,
            char_del_rate,
            char_ins_rate,
            word_confusion_rate,
            confusion_table,
            label_flip_rate,
        })
    }

    /// All rates zero, empty confusion table: the identity channel.
    pub fn silent() -> Self {
        Self {
            char_sub_rate: 0.0,
            char_del_rate: 0.0,
            char_ins_rate: 0.0,
            word_confusion_rate: 0.0,
            confusion_table: BTreeMap::new(),
            label_flip_rate: 0.0,
        }
    }

    pub fn is_silent_text_channel(&self) -> bool {
        self.char_sub_rate == 0.0
            && self.char_del_rate == 0.0
            && self.char_ins_rate == 0.0
            && self.word_confusion_rate == 0.0
    }

    pub fn label_flip_rate(&self) -> f64 {
        self.label_flip_rate
    }
}

fn random_lowercase<R: Rng>(rng: &mut R) -> char {
    (b'a' + rng.random_range(0..26u8)) as char
}

/// Corrupt one word character by character. Each character independently
/// undergoes exactly one of {substitute, delete, insert-after} with the
/// configured rates, else passes through.
fn corrupt_word<R: Rng>(word: &str, noise: &NoiseConfig, rng: &mut R) -> String {
    let sub = noise.char_sub_rate;
    let del = sub + noise.char_del_rate;
    let ins = del + noise.char_ins_rate;
    let mut out = String::with_capacity(word.len() + 2);
    for ch in word.chars() {
        let u: f64 = rng.random();
        if u < sub {
            out.push(random_lowercase(rng));
        } else if u < del {
            // dropped
        } else if u < ins {
            out.push(ch);
            out.push(random_lowercase(rng));
        } else {
            out.push(ch);
        }
    }
    out
}

/// Apply the noise channel to one text. With all rates zero this is the
/// identity. Words with a confusion-table entry are replaced wholesale with
/// probability `word_confusion_rate`; all other words go through the
/// character channel. Never returns empty text: if every character is
/// deleted the single word "a" is returned.
pub fn apply_asr_noise<R: Rng>(text: &str, noise: &NoiseConfig, rng: &mut R) -> String {
    if noise.is_silent_text_channel() {
        return text.to_string();
    }
    let mut words: Vec<String> = Vec::new();
    for word in text.split_whitespace() {
        let corrupted = match noise.confusion_table.get(word) {
            Some(subs) if rng.random::<f64>() < noise.word_confusion_rate => {
                subs[rng.random_range(0..subs.len())].clone()
            }
            _ => corrupt_word(word, noise, rng),
        };
        if !corrupted.is_empty() {
            words.push(corrupted);
        }
    }
    if words.is_empty() {
        return "a".to_string();
    }
    words.join(" ")
}
