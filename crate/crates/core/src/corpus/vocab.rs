use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const ROOT: usize = 2;
pub const SPECIALS: [&str; 3] = ["<pad>", "<unk>", "<root>"];

/// Which side of the corpus a vocabulary is built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VocabRole {
    /// Source tokens occurring at least `min_count` times.
    Input { min_count: usize },
    /// The `max_size` most frequent summary tokens.
    Output { max_size: usize },
}

impl VocabRole {
    pub const INPUT: VocabRole = VocabRole::Input { min_count: 5 };
    pub const OUTPUT: VocabRole = VocabRole::Output { max_size: 10_000 };
}

/// Token ↔ id map with `PAD`, `UNK` and `ROOT` at ids 0, 1, 2.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(words: Vec<String>) -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for w in SPECIALS.iter().map(|s| s.to_string()).chain(words) {
            if !v.index.contains_key(&w) {
                v.index.insert(w.clone(), v.tokens.len());
                v.tokens.push(w);
            }
        }
        v
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens.into_iter().skip(SPECIALS.len()).collect()
    }
}

impl Vocabulary {
    /// Builds from non-special words in id order.
    pub fn from_words<I: IntoIterator<Item = String>>(words: I) -> Self {
        Vocabulary::from(words.into_iter().collect::<Vec<_>>())
    }

    /// Counts tokens and keeps those selected by `role`. Frequency ties are
    /// broken lexicographically so ids are a pure function of the counts.
    pub fn build<'a, I>(tokens: I, role: VocabRole) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|(w, _)| !SPECIALS.contains(w)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let kept: Vec<String> = match role {
            VocabRole::Input { min_count } => ranked
                .into_iter()
                .filter(|&(_, c)| c >= min_count)
                .map(|(w, _)| w.to_string())
                .collect(),
            VocabRole::Output { max_size } => ranked.into_iter().take(max_size).map(|(w, _)| w.to_string()).collect(),
        };
        Vocabulary::from(kept)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of a token, `UNK` when absent.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    /// Id of a regular (non-special) token.
    pub fn word_id(&self, token: &str) -> Option<usize> {
        self.get(token).filter(|&i| i >= SPECIALS.len())
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// FNV-1a over the token list; used to detect vocabulary drift between a
    /// checkpoint and the data it is applied to.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for t in &self.tokens {
            for b in t.bytes().chain(std::iter::once(0xff)) {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}
