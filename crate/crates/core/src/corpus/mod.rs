//! Corpus records, vocabularies and training-target linearization.
//!
//! The native format is newline-delimited JSON:
//!
//! ```text
//! {"source": "police said a man escaped from prison on monday", "summary": "a man escaped from prison", "heads": [2, 3, 0, 5, 3]}
//! ```
//!
//! `heads[i]` is the 1-based head of summary word `i + 1`, `0` for the root.
//! An optional `source_heads` list parses the source the same way and is only
//! used by evaluation.

pub mod conll;
pub mod vocab;

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transition::{oracle, random_projective_heads, DependencyTree, TargetSequence, TransitionError};

pub use vocab::{VocabRole, Vocabulary};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("empty corpus")]
    Empty,
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub source: Vec<String>,
    pub summary: Vec<String>,
    pub heads: Vec<usize>,
    pub source_heads: Option<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    source: String,
    summary: String,
    heads: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_heads: Option<Vec<usize>>,
}

/// Lowercases and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

impl Example {
    pub fn new(source: &str, summary: &str, heads: Vec<usize>) -> Self {
        Example {
            source: tokenize(source),
            summary: tokenize(summary),
            heads,
            source_heads: None,
        }
    }

    pub fn tree(&self) -> Result<DependencyTree, TransitionError> {
        DependencyTree::new(self.summary.clone(), self.heads.clone())
    }

    /// The source parse, when one was supplied and is a valid tree.
    pub fn source_tree(&self) -> Option<Result<DependencyTree, TransitionError>> {
        self.source_heads
            .as_ref()
            .map(|h| DependencyTree::new(self.source.clone(), h.clone()))
    }

    fn to_record(&self) -> Record {
        Record {
            source: self.source.join(" "),
            summary: self.summary.join(" "),
            heads: self.heads.clone(),
            source_heads: self.source_heads.clone(),
        }
    }
}

fn check_head_list(what: &str, heads: &[usize], words: usize) -> Result<(), String> {
    if heads.len() != words {
        return Err(format!("{what} has {} heads for {words} words", heads.len()));
    }
    if let Some(&h) = heads.iter().find(|&&h| h > words) {
        return Err(format!("{what} head {h} out of range 0..={words}"));
    }
    Ok(())
}

/// Parses the native format; blank lines are skipped.
pub fn parse_corpus(text: &str) -> Result<Vec<Example>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| CorpusError::Record { line: i + 1, message };
        let r: Record = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let ex = Example {
            source: tokenize(&r.source),
            summary: tokenize(&r.summary),
            heads: r.heads,
            source_heads: r.source_heads,
        };
        check_head_list("summary", &ex.heads, ex.summary.len()).map_err(bad)?;
        if let Some(sh) = &ex.source_heads {
            check_head_list("source", sh, ex.source.len()).map_err(bad)?;
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn load_corpus(path: &Path) -> Result<Vec<Example>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    parse_corpus(&text)
}

pub fn corpus_to_string(examples: &[Example]) -> String {
    let mut s = String::new();
    for ex in examples {
        s.push_str(&serde_json::to_string(&ex.to_record()).expect("records serialize"));
        s.push('\n');
    }
    s
}

pub fn write_corpus(path: &Path, examples: &[Example]) -> Result<(), CorpusError> {
    let file = fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(corpus_to_string(examples).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| CorpusError::io(path, e))
}

/// Input vocabularies count source tokens, output vocabularies count summary
/// tokens.
pub fn build_vocab(examples: &[Example], role: VocabRole) -> Result<Vocabulary, CorpusError> {
    if examples.is_empty() {
        return Err(CorpusError::Empty);
    }
    let tokens = examples.iter().flat_map(|ex| match role {
        VocabRole::Input { .. } => ex.source.iter(),
        VocabRole::Output { .. } => ex.summary.iter(),
    });
    Ok(Vocabulary::build(tokens.map(String::as_str), role))
}

/// The oracle operation sequence of the summary tree.
pub fn linearize(ex: &Example) -> Result<TargetSequence, TransitionError> {
    Ok(oracle(&ex.tree()?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FilterConfig {
    pub max_source_len: usize,
    pub max_summary_len: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            max_source_len: 100,
            max_summary_len: 60,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FilterStats {
    pub retained: usize,
    pub empty: usize,
    pub too_long: usize,
    pub non_projective: usize,
    pub multi_root: usize,
    /// Cycles, missing root and other malformed head maps.
    pub invalid: usize,
}

impl FilterStats {
    pub fn rejected(&self) -> usize {
        self.empty + self.too_long + self.non_projective + self.multi_root + self.invalid
    }
}

impl fmt::Display for FilterStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "retained {} rejected {} (empty {}, too-long {}, non-projective {}, multi-root {}, invalid {})",
            self.retained,
            self.rejected(),
            self.empty,
            self.too_long,
            self.non_projective,
            self.multi_root,
            self.invalid
        )
    }
}

/// Keeps the examples the transition system can reach within the length caps.
pub fn filter(examples: Vec<Example>, config: &FilterConfig) -> (Vec<Example>, FilterStats) {
    let mut stats = FilterStats::default();
    let mut kept = Vec::with_capacity(examples.len());
    for ex in examples {
        if ex.source.is_empty() || ex.summary.is_empty() {
            stats.empty += 1;
            continue;
        }
        if ex.source.len() > config.max_source_len || ex.summary.len() > config.max_summary_len {
            stats.too_long += 1;
            continue;
        }
        match ex.tree() {
            Ok(_) => kept.push(ex),
            Err(TransitionError::NonProjective) => stats.non_projective += 1,
            Err(TransitionError::MultiRoot(_)) => stats.multi_root += 1,
            Err(_) => stats.invalid += 1,
        }
    }
    stats.retained = kept.len();
    if stats.rejected() > 0 {
        log::info!("corpus filter: {stats}");
    }
    (kept, stats)
}

const TOY_WORDS: [&str; 24] = [
    "police", "man", "woman", "city", "court", "prison", "river", "bank", "storm", "team", "minister", "vote",
    "escaped", "closed", "won", "said", "hit", "opened", "from", "near", "after", "new", "big", "old",
];
const TOY_FILLER: [&str; 8] = ["the", "on", "monday", "officials", "reported", "that", "in", "a"];

/// A seeded synthetic corpus: each summary is a short random word sequence
/// with a random projective tree, and its source surrounds the summary words
/// with filler.
pub fn toy_corpus(n: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(2..=5);
            let summary: Vec<String> = (0..len)
                .map(|_| TOY_WORDS.choose(&mut rng).unwrap().to_string())
                .collect();
            let heads = random_projective_heads(len, &mut rng);
            let mut source = Vec::new();
            for w in &summary {
                if rng.random_bool(0.5) {
                    source.push(TOY_FILLER.choose(&mut rng).unwrap().to_string());
                }
                source.push(w.clone());
            }
            source.push(TOY_FILLER.choose(&mut rng).unwrap().to_string());
            Example {
                source,
                summary,
                heads,
                source_heads: None,
            }
        })
        .collect()
}
