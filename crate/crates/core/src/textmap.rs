//! Character vocabulary and the character <-> integer mapping.
//!
//! Index layout for a vocabulary of `n` characters:
//!
//! | index      | meaning                              |
//! |------------|--------------------------------------|
//! | `0`        | out-of-vocabulary, decodes to `""`   |
//! | `1..=n`    | `chars[i - 1]`                       |
//! | `n + 1`    | CTC blank, decodes to `""`           |
//!
//! The model therefore emits `n + 2` logits per frame.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

pub const OOV_INDEX: usize = 0;

/// Lowercase latin letters, space and apostrophe.
pub const DEFAULT_CHARS: &str = "abcdefghijklmnopqrstuvwxyz '";

#[derive(Debug, Error)]
pub enum TextmapError {
    #[error("index {index} out of range for vocabulary with blank index {blank}")]
    IndexOutOfRange { index: usize, blank: usize },
    #[error("duplicate character {0:?} in vocabulary")]
    DuplicateChar(char),
    #[error("vocabulary is empty")]
    Empty,
    #[error("failed to read vocabulary file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    chars: Vec<char>,
    lookup: HashMap<char, usize>,
}

impl Vocabulary {
    pub fn new(chars: &str) -> Result<Self, TextmapError> {
        let chars: Vec<char> = chars.chars().collect();
        if chars.is_empty() {
            return Err(TextmapError::Empty);
        }
        let mut lookup = HashMap::with_capacity(chars.len());
        for (i, &c) in chars.iter().enumerate() {
            if lookup.insert(c, i + 1).is_some() {
                return Err(TextmapError::DuplicateChar(c));
            }
        }
        Ok(Self { chars, lookup })
    }

    /// Reads a single-line vocabulary file. A trailing line ending is ignored,
    /// every other character (including spaces) is part of the vocabulary.
    pub fn load(path: &Path) -> Result<Self, TextmapError> {
        let text = fs::read_to_string(path).map_err(|source| TextmapError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let line = text.strip_suffix('\n').unwrap_or(&text);
        let line = line.strip_suffix('\r').unwrap_or(line);
        Self::new(line)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, format!("{}\n", self.as_string()))
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn as_string(&self) -> String {
        self.chars.iter().collect()
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn oov_index(&self) -> usize {
        OOV_INDEX
    }

    pub fn blank_index(&self) -> usize {
        self.chars.len() + 1
    }

    /// Number of model outputs per frame: characters, OOV and blank.
    pub fn num_classes(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn index_of(&self, c: char) -> usize {
        self.lookup.get(&c).copied().unwrap_or(OOV_INDEX)
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new(DEFAULT_CHARS).expect("default vocabulary is valid")
    }
}

/// Integer-encoded transcript. Never contains the blank index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelSequence {
    pub ids: Vec<usize>,
}

impl LabelSequence {
    pub fn new(ids: Vec<usize>) -> Self {
        Self { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Lowercases `s` and maps every character to its index; unknown characters
/// map to the OOV index.
pub fn encode_text(s: &str, v: &Vocabulary) -> LabelSequence {
    let ids = s
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| v.index_of(c))
        .collect();
    LabelSequence { ids }
}

pub fn decode_ids(ids: &[usize], v: &Vocabulary) -> Result<String, TextmapError> {
    let blank = v.blank_index();
    let mut out = String::with_capacity(ids.len());
    for &id in ids {
        match id {
            OOV_INDEX => {}
            i if i == blank => {}
            i if i < blank => out.push(v.chars[i - 1]),
            i => return Err(TextmapError::IndexOutOfRange { index: i, blank }),
        }
    }
    Ok(out)
}
