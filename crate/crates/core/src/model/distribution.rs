use std::cmp::Ordering;

use crate::corpus::vocab::{Vocabulary, PAD, ROOT, UNK};
use crate::transition::{OpKind, ParserOp, ValidOps};

/// The output vocabulary extended with source tokens it lacks.
///
/// Ids below `base` are output-vocabulary ids; source-only tokens get ids
/// `base, base + 1, …` in order of first occurrence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceVocab {
    base: usize,
    extra: Vec<String>,
    source_ids: Vec<usize>,
    tokens: Vec<String>,
}

impl SourceVocab {
    pub fn new(source: &[String], vocab: &Vocabulary) -> Self {
        let base = vocab.len();
        let mut extra: Vec<String> = Vec::new();
        let source_ids = source
            .iter()
            .map(|w| match vocab.word_id(w) {
                Some(id) => id,
                None => match extra.iter().position(|e| e == w) {
                    Some(j) => base + j,
                    None => {
                        extra.push(w.clone());
                        base + extra.len() - 1
                    }
                },
            })
            .collect();
        SourceVocab {
            base,
            extra,
            source_ids,
            tokens: source.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.base + self.extra.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Extended id of every source position.
    pub fn source_ids(&self) -> &[usize] {
        &self.source_ids
    }

    /// Source positions holding `word`.
    pub fn positions(&self, word: &str) -> Vec<usize> {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| *t == word)
            .map(|(i, _)| i)
            .collect()
    }

    /// Extended id for a word given the output vocabulary: the vocabulary id,
    /// a source-only id, or `UNK`.
    pub fn lookup(&self, word: &str, vocab: &Vocabulary) -> usize {
        vocab
            .word_id(word)
            .or_else(|| self.extra.iter().position(|e| e == word).map(|j| self.base + j))
            .unwrap_or(UNK)
    }

    pub fn word<'a>(&'a self, id: usize, vocab: &'a Vocabulary) -> &'a str {
        if id < self.base {
            vocab.token(id)
        } else {
            &self.extra[id - self.base]
        }
    }
}

/// Probabilities of `REDUCE-L`, `REDUCE-R` and `GEN(w)` for every extended
/// vocabulary id `w`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointDistribution {
    pub reduce_left: f64,
    pub reduce_right: f64,
    pub gen: Vec<f64>,
}

/// One entry of a [`JointDistribution`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum JointOp {
    ReduceLeft,
    ReduceRight,
    Gen(usize),
}

impl JointOp {
    pub fn kind(self) -> OpKind {
        match self {
            JointOp::ReduceLeft => OpKind::ReduceLeft,
            JointOp::ReduceRight => OpKind::ReduceRight,
            JointOp::Gen(_) => OpKind::Gen,
        }
    }

    pub fn to_parser_op(self, source: &SourceVocab, vocab: &Vocabulary) -> ParserOp {
        match self {
            JointOp::ReduceLeft => ParserOp::ReduceLeft,
            JointOp::ReduceRight => ParserOp::ReduceRight,
            JointOp::Gen(id) => ParserOp::gen(source.word(id, vocab)),
        }
    }
}

impl JointDistribution {
    pub fn total(&self) -> f64 {
        self.reduce_left + self.reduce_right + self.gen.iter().sum::<f64>()
    }

    pub fn gen_mass(&self) -> f64 {
        self.gen.iter().sum()
    }

    pub fn prob(&self, op: JointOp) -> f64 {
        match op {
            JointOp::ReduceLeft => self.reduce_left,
            JointOp::ReduceRight => self.reduce_right,
            JointOp::Gen(id) => self.gen.get(id).copied().unwrap_or(0.0),
        }
    }

    /// Zeroes invalid operation kinds and the special tokens (`PAD`, `UNK`,
    /// `ROOT`), then renormalizes.
    pub fn masked(mut self, valid: &ValidOps) -> JointDistribution {
        if !valid.reduce_left {
            self.reduce_left = 0.0;
        }
        if !valid.reduce_right {
            self.reduce_right = 0.0;
        }
        if valid.gen {
            for special in [PAD, UNK, ROOT] {
                if let Some(p) = self.gen.get_mut(special) {
                    *p = 0.0;
                }
            }
        } else {
            self.gen.iter_mut().for_each(|p| *p = 0.0);
        }
        let z = self.total();
        assert!(z > 0.0, "every operation was masked");
        self.reduce_left /= z;
        self.reduce_right /= z;
        self.gen.iter_mut().for_each(|p| *p /= z);
        self
    }

    /// Entries with non-zero probability, most probable first; ties go to
    /// `REDUCE-L`, then `REDUCE-R`, then `GEN` by ascending word id.
    pub fn ranked(&self) -> Vec<(JointOp, f64)> {
        let mut entries: Vec<(JointOp, f64)> = [
            (JointOp::ReduceLeft, self.reduce_left),
            (JointOp::ReduceRight, self.reduce_right),
        ]
        .into_iter()
        .chain(self.gen.iter().enumerate().map(|(i, &p)| (JointOp::Gen(i), p)))
        .filter(|&(_, p)| p > 0.0)
        .collect();
        entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
        entries
    }

    /// The `k` best entries, ranked as in [`ranked`](Self::ranked).
    pub fn top_k(&self, k: usize) -> Vec<(JointOp, f64)> {
        let mut r = self.ranked();
        r.truncate(k);
        r
    }

    pub fn argmax(&self) -> Option<(JointOp, f64)> {
        self.top_k(1).into_iter().next()
    }
}
