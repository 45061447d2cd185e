//! ROUGE and dependency-relation preservation scores.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::transition::DependencyTree;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl Prf {
    /// From a match count and the two set sizes; empty denominators give 0.
    pub fn from_counts(matched: usize, predicted: usize, reference: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let (p, r) = (ratio(matched, predicted), ratio(matched, reference));
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        Prf {
            precision: p,
            recall: r,
            f,
        }
    }
}

fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_default() += 1;
        }
    }
    counts
}

/// ROUGE-N with clipped n-gram counts.
pub fn rouge_n<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> Prf {
    assert!(n >= 1, "n-gram order must be positive");
    let c = ngrams(candidate, n);
    let r = ngrams(reference, n);
    let overlap = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    Prf::from_counts(overlap, c.values().sum(), r.values().sum())
}

pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L from the longest common subsequence, balanced F (β = 1).
pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Prf {
    Prf::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

/// A directed, unlabeled head → dependent word pair.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Relation {
    pub head: String,
    pub dependent: String,
}

impl Relation {
    pub fn new(head: impl Into<String>, dependent: impl Into<String>) -> Self {
        Relation {
            head: head.into(),
            dependent: dependent.into(),
        }
    }
}

/// Word-word arcs of a tree; the root attachment is not a relation.
pub fn relations(tree: &DependencyTree) -> Vec<Relation> {
    tree.relations().into_iter().map(|(h, d)| Relation::new(h, d)).collect()
}

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    /// Parses `word v1 … vd` lines. Blank lines are skipped and the first
    /// occurrence of a word wins.
    pub fn parse(text: &str) -> Result<Self, EmbeddingError> {
        let mut table = EmbeddingTable::default();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let bad = |message: String| EmbeddingError::Parse { line: i + 1, message };
            let v = parts
                .map(|x| x.parse::<f64>().map_err(|_| bad(format!("bad number {x:?}"))))
                .collect::<Result<Vec<f64>, _>>()?;
            if v.is_empty() {
                return Err(bad(format!("no vector for {word:?}")));
            }
            if table.vectors.is_empty() {
                table.dim = v.len();
            } else if v.len() != table.dim {
                return Err(bad(format!("{} values, expected {}", v.len(), table.dim)));
            }
            table.vectors.entry(word.to_string()).or_insert(v);
        }
        Ok(table)
    }

    pub fn insert(&mut self, word: impl Into<String>, v: Vec<f64>) {
        if self.vectors.is_empty() {
            self.dim = v.len();
        }
        assert_eq!(v.len(), self.dim, "embedding width");
        self.vectors.insert(word.into(), v);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// Cosine similarity; `None` if either word is missing. Zero vectors
    /// are only similar to themselves.
    pub fn cosine(&self, a: &str, b: &str) -> Option<f64> {
        let (x, y) = (self.get(a)?, self.get(b)?);
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|p| p * p).sum::<f64>().sqrt();
        let ny = y.iter().map(|p| p * p).sum::<f64>().sqrt();
        if nx == 0.0 || ny == 0.0 {
            return Some(if a == b { 1.0 } else { 0.0 });
        }
        Some((dot / (nx * ny)).clamp(-1.0, 1.0))
    }

    /// Word similarity used for lenient matching: identical strings score 1,
    /// otherwise the cosine, or 0 when a word has no vector.
    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        if a == b {
            return 1.0;
        }
        match self.cosine(a, b) {
            Some(c) => c,
            None => {
                log::trace!("no embedding for {a:?} or {b:?}, using string equality");
                0.0
            }
        }
    }
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable, EmbeddingError> {
    EmbeddingTable::parse(&fs::read_to_string(path)?)
}

/// Relation-preservation score. A predicted and a target relation match when
/// both the heads and the dependents have similarity at least `sigma`;
/// `sigma >= 1` means exact string equality. Each relation matches at most
/// once: candidate pairs are taken greedily by descending min-similarity,
/// ties in predicted then target order.
pub fn relation_f(predicted: &[Relation], target: &[Relation], table: &EmbeddingTable, sigma: f64) -> Prf {
    Prf::from_counts(
        relation_matches(predicted, target, table, sigma),
        predicted.len(),
        target.len(),
    )
}

/// Number of one-to-one matches behind [`relation_f`].
pub fn relation_matches(predicted: &[Relation], target: &[Relation], table: &EmbeddingTable, sigma: f64) -> usize {
    assert!(sigma > 0.0, "threshold must be positive");
    let sim = |a: &str, b: &str| {
        if sigma >= 1.0 {
            if a == b {
                1.0
            } else {
                0.0
            }
        } else {
            table.similarity(a, b)
        }
    };
    let mut pairs = Vec::new();
    for (i, p) in predicted.iter().enumerate() {
        for (j, t) in target.iter().enumerate() {
            let s = sim(&p.head, &t.head).min(sim(&p.dependent, &t.dependent));
            if s >= sigma.min(1.0) {
                pairs.push((s, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = vec![false; predicted.len()];
    let mut used_t = vec![false; target.len()];
    let mut matched = 0;
    for (_, i, j) in pairs {
        if !used_p[i] && !used_t[j] {
            used_p[i] = true;
            used_t[j] = true;
            matched += 1;
        }
    }
    matched
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    fn close(a: Prf, p: f64, r: f64, f: f64) -> bool {
        (a.precision - p).abs() < 1e-12 && (a.recall - r).abs() < 1e-12 && (a.f - f).abs() < 1e-12
    }

    #[test]
    fn rouge_examples() {
        let a = t("a man escaped from prison");
        assert!(close(rouge_n(&a, &a, 1), 1.0, 1.0, 1.0));
        assert!(close(rouge_n(&a, &a, 2), 1.0, 1.0, 1.0));
        assert!(close(rouge_n(&t("a man escaped"), &a, 1), 1.0, 0.6, 0.75));
        assert!(close(rouge_n(&t("x y"), &a, 1), 0.0, 0.0, 0.0));
        // clipped counts: "the" appears once in the reference
        assert!(close(rouge_n(&t("the the the"), &t("the cat"), 1), 1.0 / 3.0, 0.5, 0.4));
        assert!(close(rouge_n(&t("a"), &a, 2), 0.0, 0.0, 0.0));
    }

    #[test]
    fn rouge_l_examples() {
        let a = t("a b c d");
        assert!(close(rouge_l(&a, &a), 1.0, 1.0, 1.0));
        assert_eq!(lcs_len(&a, &t("a c b d")), 3);
        assert!(close(rouge_l(&a, &t("a c b d")), 0.75, 0.75, 0.75));
        assert!(close(rouge_l(&[] as &[&str], &a), 0.0, 0.0, 0.0));
    }

    fn rel(h: &str, d: &str) -> Relation {
        Relation::new(h, d)
    }

    fn table() -> EmbeddingTable {
        EmbeddingTable::parse("man 1 0 0\nperson 0.9 0.1 0\nescaped 0 1 0\nfled 0 0.95 0.3\nprison 0 0 1\n").unwrap()
    }

    #[test]
    fn strict_and_lenient_matching() {
        let tab = table();
        let gold = vec![rel("escaped", "man"), rel("escaped", "prison")];
        assert_eq!(relation_f(&gold, &gold, &tab, 1.0).f, 1.0);
        let pred = vec![rel("escaped", "person")];
        assert_eq!(relation_f(&pred, &[rel("escaped", "man")], &tab, 1.0).f, 0.0);
        assert_eq!(relation_f(&pred, &[rel("escaped", "man")], &tab, 0.9).f, 1.0);
        // direction matters
        assert_eq!(relation_f(&[rel("man", "escaped")], &gold, &tab, 0.5).f, 0.0);
        // one-to-one: two identical predictions match one target once
        let twice = vec![rel("escaped", "man"), rel("escaped", "man")];
        let s = relation_f(&twice, &[rel("escaped", "man")], &tab, 1.0);
        assert!(close(s, 0.5, 1.0, 2.0 / 3.0));
        assert_eq!(relation_f(&[], &gold, &tab, 1.0).f, 0.0);
        assert_eq!(relation_f(&gold, &[], &tab, 1.0).f, 0.0);
    }

    #[test]
    fn greedy_prefers_the_closest_pair() {
        let tab = table();
        // "fled" is close to "escaped"; the exact pair must win the target
        let pred = vec![rel("fled", "man"), rel("escaped", "man")];
        let gold = vec![rel("escaped", "man")];
        let s = relation_f(&pred, &gold, &tab, 0.5);
        assert_eq!(s.f, 2.0 / 3.0);
        let cos = tab.cosine("fled", "escaped").unwrap();
        assert!(cos > 0.9 && cos < 1.0);
    }

    #[test]
    fn missing_words_fall_back_to_equality() {
        let tab = table();
        assert_eq!(tab.similarity("zebra", "zebra"), 1.0);
        assert_eq!(tab.similarity("zebra", "man"), 0.0);
        let s = relation_f(&[rel("zebra", "man")], &[rel("zebra", "person")], &tab, 0.8);
        assert_eq!(s.f, 1.0);
    }

    #[test]
    fn embedding_files() {
        let tab = EmbeddingTable::parse("a 1 2 3\nb 0 1 0\na 9 9 9\n").unwrap();
        assert_eq!(tab.len(), 2);
        assert_eq!(tab.dim(), 3);
        assert_eq!(tab.get("a"), Some(&[1.0, 2.0, 3.0][..]));
        assert!(EmbeddingTable::parse("").unwrap().is_empty());
        match EmbeddingTable::parse("a 1 2\nb 1\n") {
            Err(EmbeddingError::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        match EmbeddingTable::parse("a 1 2\n\nb 1 z\n") {
            Err(EmbeddingError::Parse { line: 3, message }) => assert!(message.contains("\"z\"")),
            other => panic!("{other:?}"),
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.txt");
        std::fs::write(&path, "x 0.5 0.5\n").unwrap();
        let tab = load_embeddings(&path).unwrap();
        assert!((tab.cosine("x", "x").unwrap() - 1.0).abs() < 1e-12);
    }

    fn word() -> impl Strategy<Value = String> {
        prop::sample::select(vec!["a", "b", "c", "d", "e", "f"]).prop_map(String::from)
    }

    fn relations_strategy() -> impl Strategy<Value = Vec<Relation>> {
        prop::collection::vec((word(), word()).prop_map(|(h, d)| Relation::new(h, d)), 0..8)
    }

    fn random_table() -> impl Strategy<Value = EmbeddingTable> {
        prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 6).prop_map(|vs| {
            let mut t = EmbeddingTable::default();
            for (w, v) in ["a", "b", "c", "d", "e", "f"].iter().zip(vs) {
                t.insert(*w, v);
            }
            t
        })
    }

    fn strict(pred: &[Relation], gold: &[Relation]) -> Prf {
        let mut left = gold.to_vec();
        let mut hits = 0;
        for p in pred {
            if let Some(k) = left.iter().position(|g| g == p) {
                left.remove(k);
                hits += 1;
            }
        }
        Prf::from_counts(hits, pred.len(), gold.len())
    }

    proptest! {
        #[test]
        fn unit_threshold_is_strict(p in relations_strategy(), g in relations_strategy(), tab in random_table()) {
            prop_assert_eq!(relation_f(&p, &g, &tab, 1.0), strict(&p, &g));
        }

        #[test]
        fn lower_threshold_never_lowers_f(p in relations_strategy(), g in relations_strategy(), tab in random_table()) {
            let mut last = -1.0;
            for sigma in [1.0, 0.9, 0.8, 0.7] {
                let s = relation_f(&p, &g, &tab, sigma);
                prop_assert!(s.f >= last);
                prop_assert!(s.f <= s.precision.max(s.recall) + 1e-12);
                last = s.f;
            }
        }

        #[test]
        fn rouge_swaps_precision_and_recall(a in prop::collection::vec(word(), 0..10), b in prop::collection::vec(word(), 0..10)) {
            for n in 1..=2 {
                let x = rouge_n(&a, &b, n);
                let y = rouge_n(&b, &a, n);
                prop_assert_eq!(x.precision, y.recall);
                prop_assert!((0.0..=1.0).contains(&x.f));
            }
            let x = rouge_l(&a, &b);
            let y = rouge_l(&b, &a);
            prop_assert_eq!(x.precision, y.recall);
        }
    }
}
