//! Transition system interleaving word generation with arc reductions.
//!
//! A target sequence mixes `GEN(w)` operations, which push a fresh summary
//! word onto the stack, with `REDUCE-L`/`REDUCE-R` operations that merge the
//! two topmost partial trees. Position 0 is the root node `R`, which sits at
//! the bottom of the stack for the whole derivation; words are numbered from 1
//! in generation order.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

/// Position of the artificial root node.
pub const ROOT: usize = 0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransitionError {
    #[error("{op} is not permitted here: {detail}")]
    InvalidOp { op: String, detail: String },
    #[error("operation {index} failed: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<TransitionError>,
    },
    #[error("incomplete sequence: {0} partial trees remain on the stack")]
    Incomplete(usize),
    #[error("non-projective tree")]
    NonProjective,
    #[error("multi-root tree: {0} words attach to the root")]
    MultiRoot(usize),
    #[error("no word attaches to the root")]
    NoRoot,
    #[error("head index {head} of word {word} is out of range")]
    HeadOutOfRange { word: usize, head: usize },
    #[error("cyclic head map through word {0}")]
    Cycle(usize),
    #[error("{words} words but {heads} heads")]
    LengthMismatch { words: usize, heads: usize },
    #[error("empty tree")]
    Empty,
    #[error("cannot parse operation `{0}`")]
    Parse(String),
}

/// The three operation kinds, in tie-breaking order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    ReduceLeft,
    ReduceRight,
    Gen,
}

impl OpKind {
    pub const ALL: [OpKind; 3] = [OpKind::ReduceLeft, OpKind::ReduceRight, OpKind::Gen];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<OpKind> {
        Self::ALL.get(i).copied()
    }

    pub fn is_reduce(self) -> bool {
        !matches!(self, OpKind::Gen)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpKind::ReduceLeft => "RL",
            OpKind::ReduceRight => "RR",
            OpKind::Gen => "GEN",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ParserOp {
    Gen(String),
    ReduceLeft,
    ReduceRight,
}

impl ParserOp {
    pub fn gen(word: impl Into<String>) -> Self {
        ParserOp::Gen(word.into())
    }

    pub fn kind(&self) -> OpKind {
        match self {
            ParserOp::Gen(_) => OpKind::Gen,
            ParserOp::ReduceLeft => OpKind::ReduceLeft,
            ParserOp::ReduceRight => OpKind::ReduceRight,
        }
    }

    pub fn word(&self) -> Option<&str> {
        match self {
            ParserOp::Gen(w) => Some(w),
            _ => None,
        }
    }
}

impl fmt::Display for ParserOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParserOp::Gen(w) => write!(f, "GEN({w})"),
            ParserOp::ReduceLeft => f.write_str("RL"),
            ParserOp::ReduceRight => f.write_str("RR"),
        }
    }
}

impl FromStr for ParserOp {
    type Err = TransitionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "RL" => Ok(ParserOp::ReduceLeft),
            "RR" => Ok(ParserOp::ReduceRight),
            _ => s
                .strip_prefix("GEN(")
                .and_then(|rest| rest.strip_suffix(')'))
                .filter(|w| !w.is_empty())
                .map(ParserOp::gen)
                .ok_or_else(|| TransitionError::Parse(s.to_string())),
        }
    }
}

/// A (possibly partial) operation stream.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct TargetSequence(pub Vec<ParserOp>);

impl TargetSequence {
    pub fn ops(&self) -> &[ParserOp] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<ParserOp>> for TargetSequence {
    fn from(ops: Vec<ParserOp>) -> Self {
        TargetSequence(ops)
    }
}

impl fmt::Display for TargetSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, op) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{op}")?;
        }
        Ok(())
    }
}

impl FromStr for TargetSequence {
    type Err = TransitionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split_whitespace()
            .map(str::parse)
            .collect::<Result<Vec<_>, _>>()
            .map(TargetSequence)
    }
}

/// Unlabeled dependency tree over 1-based word positions.
///
/// Construction enforces a well-formed, acyclic, projective head map with
/// exactly one word attached to the root.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DependencyTree {
    words: Vec<String>,
    heads: Vec<usize>,
}

impl DependencyTree {
    pub fn new(words: Vec<String>, heads: Vec<usize>) -> Result<Self, TransitionError> {
        if words.len() != heads.len() {
            return Err(TransitionError::LengthMismatch {
                words: words.len(),
                heads: heads.len(),
            });
        }
        if words.is_empty() {
            return Err(TransitionError::Empty);
        }
        check_heads(&heads)?;
        match heads.iter().filter(|&&h| h == ROOT).count() {
            1 => {}
            0 => return Err(TransitionError::NoRoot),
            k => return Err(TransitionError::MultiRoot(k)),
        }
        if !is_projective(&heads)? {
            return Err(TransitionError::NonProjective);
        }
        Ok(DependencyTree { words, heads })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// `heads()[i]` is the head position of word `i + 1`.
    pub fn heads(&self) -> &[usize] {
        &self.heads
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn head(&self, position: usize) -> usize {
        self.heads[position - 1]
    }

    /// The root child (the single word whose head is `R`).
    pub fn root_word(&self) -> usize {
        self.heads.iter().position(|&h| h == ROOT).unwrap() + 1
    }

    /// (head word, dependent word) pairs, excluding the root arc.
    pub fn relations(&self) -> Vec<(String, String)> {
        self.heads
            .iter()
            .enumerate()
            .filter(|(_, &h)| h != ROOT)
            .map(|(d, &h)| (self.words[h - 1].clone(), self.words[d].clone()))
            .collect()
    }
}

/// Checks that every head is in range and that following heads always
/// reaches the root.
pub fn check_heads(heads: &[usize]) -> Result<(), TransitionError> {
    let n = heads.len();
    for (i, &h) in heads.iter().enumerate() {
        if h > n || h == i + 1 {
            return Err(if h > n {
                TransitionError::HeadOutOfRange { word: i + 1, head: h }
            } else {
                TransitionError::Cycle(i + 1)
            });
        }
    }
    // 0 = unvisited, 1 = on current path, 2 = reaches root
    let mut mark = vec![0u8; n + 1];
    mark[ROOT] = 2;
    for start in 1..=n {
        let mut path = Vec::new();
        let mut cur = start;
        while mark[cur] == 0 {
            mark[cur] = 1;
            path.push(cur);
            cur = heads[cur - 1];
        }
        if mark[cur] == 1 {
            return Err(TransitionError::Cycle(cur));
        }
        for p in path {
            mark[p] = 2;
        }
    }
    Ok(())
}

/// True iff no two arcs cross when drawn above the sentence with `R` at
/// position 0.
///
/// Uses the equivalent formulation that every word strictly between a head
/// and its dependent is dominated by that head.
pub fn is_projective(heads: &[usize]) -> Result<bool, TransitionError> {
    check_heads(heads)?;
    let head_of = |p: usize| if p == ROOT { None } else { Some(heads[p - 1]) };
    let dominated_by = |mut k: usize, h: usize| loop {
        if k == h {
            return true;
        }
        match head_of(k) {
            Some(next) => k = next,
            None => return false,
        }
    };
    for (i, &h) in heads.iter().enumerate() {
        let d = i + 1;
        let (lo, hi) = if h < d { (h, d) } else { (d, h) };
        if (lo + 1..hi).any(|k| !dominated_by(k, h)) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Which operation kinds may be applied to a state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ValidOps {
    pub gen: bool,
    pub reduce_left: bool,
    pub reduce_right: bool,
    /// Set when the state is terminal; all flags are then false.
    pub complete: bool,
}

impl ValidOps {
    pub fn contains(&self, kind: OpKind) -> bool {
        match kind {
            OpKind::Gen => self.gen,
            OpKind::ReduceLeft => self.reduce_left,
            OpKind::ReduceRight => self.reduce_right,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.gen || self.reduce_left || self.reduce_right)
    }

    pub fn kinds(&self) -> Vec<OpKind> {
        OpKind::ALL.into_iter().filter(|&k| self.contains(k)).collect()
    }
}

/// Symbolic parser configuration: a stack of partial trees (identified by
/// their root positions, `R` at the bottom), the words generated so far, the
/// operation history and the accumulated arcs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StackState {
    stack: Vec<usize>,
    generated: Vec<String>,
    ops: Vec<ParserOp>,
    arcs: Vec<(usize, usize)>,
}

impl Default for StackState {
    fn default() -> Self {
        Self::new()
    }
}

impl StackState {
    pub fn new() -> Self {
        StackState {
            stack: vec![ROOT],
            generated: Vec::new(),
            ops: Vec::new(),
            arcs: Vec::new(),
        }
    }

    /// Root positions of the partial trees, bottom first.
    pub fn stack(&self) -> &[usize] {
        &self.stack
    }

    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    pub fn generated(&self) -> &[String] {
        &self.generated
    }

    pub fn ops(&self) -> &[ParserOp] {
        &self.ops
    }

    /// (head, dependent) pairs in the order they were created.
    pub fn arcs(&self) -> &[(usize, usize)] {
        &self.arcs
    }

    pub fn is_terminal(&self) -> bool {
        self.stack.len() == 1 && !self.generated.is_empty()
    }

    pub fn valid_ops(&self, max_words: usize) -> ValidOps {
        if self.is_terminal() {
            return ValidOps {
                complete: true,
                ..ValidOps::default()
            };
        }
        ValidOps {
            gen: self.generated.len() < max_words,
            reduce_left: self.stack.len() >= 3,
            reduce_right: self.stack.len() >= 2,
            complete: false,
        }
    }

    /// Returns the successor state, leaving `self` untouched.
    pub fn apply_op(&self, op: &ParserOp) -> Result<StackState, TransitionError> {
        let mut next = self.clone();
        next.apply_in_place(op)?;
        Ok(next)
    }

    pub(crate) fn apply_in_place(&mut self, op: &ParserOp) -> Result<(), TransitionError> {
        let invalid = |detail: &str| TransitionError::InvalidOp {
            op: op.to_string(),
            detail: detail.to_string(),
        };
        if self.is_terminal() {
            return Err(invalid("the derivation is already complete"));
        }
        match op {
            ParserOp::Gen(w) => {
                if w.is_empty() {
                    return Err(invalid("empty word"));
                }
                self.generated.push(w.clone());
                self.stack.push(self.generated.len());
            }
            ParserOp::ReduceLeft => {
                if self.stack.len() < 3 {
                    return Err(invalid("needs two partial trees above the root"));
                }
                let top = self.stack.pop().unwrap();
                let second = self.stack.pop().unwrap();
                self.arcs.push((top, second));
                self.stack.push(top);
            }
            ParserOp::ReduceRight => {
                if self.stack.len() < 2 {
                    return Err(invalid("needs a partial tree above the root"));
                }
                let top = self.stack.pop().unwrap();
                let second = *self.stack.last().unwrap();
                self.arcs.push((second, top));
            }
        }
        self.ops.push(op.clone());
        Ok(())
    }

    /// The tree built so far; only defined for terminal states.
    pub fn tree(&self) -> Result<DependencyTree, TransitionError> {
        if !self.is_terminal() {
            return Err(TransitionError::Incomplete(self.stack.len() - 1));
        }
        let mut heads = vec![ROOT; self.generated.len()];
        for &(h, d) in &self.arcs {
            heads[d - 1] = h;
        }
        DependencyTree::new(self.generated.clone(), heads)
    }
}

/// Runs a complete operation sequence from the initial state.
pub fn execute(ops: &TargetSequence) -> Result<DependencyTree, TransitionError> {
    let mut state = StackState::new();
    for (index, op) in ops.ops().iter().enumerate() {
        state.apply_in_place(op).map_err(|e| TransitionError::AtIndex {
            index,
            source: Box::new(e),
        })?;
    }
    state.tree()
}

/// Linearizes a tree, reducing each dependent as soon as its own subtree is
/// complete. Words are generated in surface order.
pub fn oracle(tree: &DependencyTree) -> TargetSequence {
    let n = tree.len();
    let mut pending = vec![0usize; n + 1];
    for &h in tree.heads() {
        pending[h] += 1;
    }
    let head = |p: usize| tree.heads()[p - 1];

    let mut ops = Vec::with_capacity(2 * n);
    let mut stack = vec![ROOT];
    for (i, word) in tree.words().iter().enumerate() {
        ops.push(ParserOp::Gen(word.clone()));
        stack.push(i + 1);
        while stack.len() >= 2 {
            let len = stack.len();
            let (second, top) = (stack[len - 2], stack[len - 1]);
            if second != ROOT && head(second) == top && pending[second] == 0 {
                ops.push(ParserOp::ReduceLeft);
                pending[top] -= 1;
                stack.remove(len - 2);
            } else if head(top) == second && pending[top] == 0 {
                ops.push(ParserOp::ReduceRight);
                pending[second] -= 1;
                stack.pop();
            } else {
                break;
            }
        }
    }
    debug_assert_eq!(stack, vec![ROOT]);
    TargetSequence(ops)
}

/// Words of the `GEN` operations, in order. Works on prefixes.
pub fn extract_summary(ops: &[ParserOp]) -> Vec<String> {
    ops.iter().filter_map(|op| op.word().map(str::to_string)).collect()
}

/// Samples a random projective head map over `n` words with a single root
/// child. Every such tree has non-zero probability.
pub fn random_projective_heads<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    fn attach<R: Rng + ?Sized>(lo: usize, hi: usize, head: usize, heads: &mut [usize], rng: &mut R) {
        // Split [lo, hi] into contiguous segments; each segment is a subtree
        // whose root attaches to `head`.
        let mut start = lo;
        while start <= hi {
            let end = rng.random_range(start..=hi);
            let root = rng.random_range(start..=end);
            heads[root - 1] = head;
            if root > start {
                attach(start, root - 1, root, heads, rng);
            }
            if root < end {
                attach(root + 1, end, root, heads, rng);
            }
            start = end + 1;
        }
    }
    assert!(n > 0);
    let mut heads = vec![ROOT; n];
    let root = rng.random_range(1..=n);
    if root > 1 {
        attach(1, root - 1, root, &mut heads, rng);
    }
    if root < n {
        attach(root + 1, n, root, &mut heads, rng);
    }
    heads
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn escaped_tree() -> DependencyTree {
        DependencyTree::new(words("a man escaped from prison"), vec![2, 3, 0, 5, 3]).unwrap()
    }

    const ESCAPED_OPS: &str = "GEN(a) GEN(man) RL GEN(escaped) RL GEN(from) GEN(prison) RL RR RR";

    fn run(ops: &str) -> StackState {
        let seq: TargetSequence = ops.parse().unwrap();
        let mut s = StackState::new();
        for op in seq.ops() {
            s = s.apply_op(op).unwrap();
        }
        s
    }

    #[test]
    fn valid_ops_at_start_is_gen_only() {
        let v = StackState::new().valid_ops(10);
        assert_eq!(v.kinds(), vec![OpKind::Gen]);
        assert!(!v.complete);
    }

    #[test]
    fn valid_ops_with_three_partial_trees() {
        let s = run("GEN(a) GEN(man) RL GEN(escaped) RL GEN(from) GEN(prison) RL");
        assert_eq!(s.depth(), 3);
        let v = s.valid_ops(10);
        assert_eq!(v.kinds(), vec![OpKind::ReduceLeft, OpKind::ReduceRight, OpKind::Gen]);
    }

    #[test]
    fn gen_capped_at_max_words() {
        let s = run("GEN(hi)");
        assert_eq!(s.valid_ops(1).kinds(), vec![OpKind::ReduceRight]);
    }

    #[test]
    fn terminal_state_has_no_valid_ops() {
        let s = run("GEN(hi) RR");
        assert!(s.is_terminal());
        let v = s.valid_ops(5);
        assert!(v.complete && v.is_empty());
        assert_eq!(s.arcs(), &[(ROOT, 1)]);
    }

    #[test]
    fn reduce_left_makes_top_the_head() {
        let s = run("GEN(a) GEN(man) RL");
        assert_eq!(s.stack(), &[ROOT, 2]);
        assert_eq!(s.arcs(), &[(2, 1)]);
    }

    #[test]
    fn reduce_right_makes_top_the_dependent() {
        let s = run("GEN(a) GEN(man) RL GEN(escaped) RL GEN(from) GEN(prison) RL RR");
        assert_eq!(s.stack(), &[ROOT, 3]);
        assert_eq!(s.arcs().last(), Some(&(3, 5)));
    }

    #[test]
    fn apply_op_rejects_invalid() {
        let s = run("GEN(a)");
        assert!(matches!(
            s.apply_op(&ParserOp::ReduceLeft),
            Err(TransitionError::InvalidOp { .. })
        ));
        assert!(StackState::new().apply_op(&ParserOp::ReduceRight).is_err());
        let done = run("GEN(a) RR");
        assert!(done.apply_op(&ParserOp::gen("b")).is_err());
    }

    #[test]
    fn execute_reproduces_escape_trace() {
        let tree = execute(&ESCAPED_OPS.parse().unwrap()).unwrap();
        assert_eq!(tree, escaped_tree());
    }

    #[test]
    fn execute_reports_failing_index() {
        let err = execute(&"GEN(a) RL".parse().unwrap()).unwrap_err();
        assert!(matches!(err, TransitionError::AtIndex { index: 1, .. }));
        let err = execute(&"GEN(a) GEN(b) RL".parse().unwrap()).unwrap_err();
        assert_eq!(err, TransitionError::Incomplete(1));
        assert!(execute(&TargetSequence::default()).is_err());
    }

    #[test]
    fn oracle_matches_escape_trace() {
        assert_eq!(oracle(&escaped_tree()).to_string(), ESCAPED_OPS);
        let one = DependencyTree::new(words("hi"), vec![0]).unwrap();
        assert_eq!(oracle(&one).to_string(), "GEN(hi) RR");
    }

    #[test]
    fn extract_summary_on_prefixes() {
        let seq: TargetSequence = ESCAPED_OPS.parse().unwrap();
        assert_eq!(extract_summary(seq.ops()), words("a man escaped from prison"));
        assert!(extract_summary(&[]).is_empty());
        assert_eq!(
            extract_summary(&[ParserOp::gen("x"), ParserOp::ReduceRight]),
            words("x")
        );
    }

    #[test]
    fn projectivity() {
        assert!(is_projective(escaped_tree().heads()).unwrap());
        // arcs 3->1 and 4->2 cross
        assert!(!is_projective(&[3, 4, 0, 3]).unwrap());
        assert_eq!(is_projective(&[2, 1]), Err(TransitionError::Cycle(1)));
        assert!(is_projective(&[5]).is_err());
    }

    #[test]
    fn tree_construction_errors() {
        assert_eq!(
            DependencyTree::new(words("a b"), vec![0, 0]).unwrap_err(),
            TransitionError::MultiRoot(2)
        );
        assert_eq!(
            DependencyTree::new(words("a b c d"), vec![3, 4, 0, 3]).unwrap_err(),
            TransitionError::NonProjective
        );
        assert!(matches!(
            DependencyTree::new(words("a"), vec![0, 1]).unwrap_err(),
            TransitionError::LengthMismatch { .. }
        ));
    }

    #[test]
    fn relations_exclude_root_arc() {
        let rels = escaped_tree().relations();
        assert_eq!(rels.len(), 4);
        assert!(rels.contains(&("escaped".to_string(), "man".to_string())));
    }

    #[test]
    fn op_text_round_trip() {
        let seq: TargetSequence = "GEN(() GEN()) RL RR".parse().unwrap();
        assert_eq!(seq.ops()[0], ParserOp::gen("("));
        assert_eq!(seq.ops()[1], ParserOp::gen(")"));
        assert_eq!(seq.to_string(), "GEN(() GEN()) RL RR");
        assert!("GEN()".parse::<ParserOp>().is_err());
        assert!("SHIFT".parse::<ParserOp>().is_err());
    }

    #[test]
    fn random_trees_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=12 {
            for _ in 0..50 {
                let heads = random_projective_heads(n, &mut rng);
                let w = (0..n).map(|i| format!("w{i}")).collect();
                DependencyTree::new(w, heads).unwrap();
            }
        }
    }
}
