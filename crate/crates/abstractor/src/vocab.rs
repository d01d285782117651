//! Word-level vocabulary with reserved special tokens.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const UNK: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const SPECIALS: [&str; 3] = ["<unk>", "<bos>", "<eos>"];

/// Default cap on vocabulary size, specials included.
pub const DEFAULT_MAX_SIZE: usize = 8000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    #[serde(skip)]
    ids: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_words(words: impl IntoIterator<Item = String>) -> Self {
        let mut v = Vocab {
            words: SPECIALS.iter().map(|s| s.to_string()).collect(),
            ids: HashMap::new(),
        };
        for w in words {
            if !SPECIALS.contains(&w.as_str()) && !v.words.contains(&w) {
                v.words.push(w);
            }
        }
        v.reindex();
        v
    }

    /// The `max_size - 3` most frequent words, ties broken alphabetically.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>, max_size: usize) -> Self {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            *freq.entry(t).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(max_size.saturating_sub(SPECIALS.len()));
        Vocab::from_words(ranked.into_iter().map(|(w, _)| w.to_string()))
    }

    fn reindex(&mut self) {
        self.ids = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
    }

    /// Restore the lookup table after deserialization.
    pub fn rebuild_index(mut self) -> Self {
        self.reindex();
        self
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.ids.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: u32) -> &str {
        self.words.get(id as usize).map(String::as_str).unwrap_or(SPECIALS[0])
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<u32> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }

    /// Words for `ids`, dropping special tokens.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| id as usize >= SPECIALS.len())
            .map(|&id| self.word(id).to_string())
            .collect()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}
