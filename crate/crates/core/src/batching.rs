//! Depth-layered scheduling of tree compositions across a mini-batch.
//!
//! Under teacher forcing every summary tree is known before the decoder
//! runs, so all word-word reductions of a batch can be computed up front. A
//! composition node sits one level above its deepest child; each level is
//! evaluated with a single matrix product over all its members.

use crate::autodiff::{Real, Tape, TensorError, Var};
use crate::model::compose;
use crate::transition::{oracle, DependencyTree, ParserOp};

/// Input of a composition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Child {
    /// A word embedding, by 1-based summary position.
    Leaf(usize),
    /// An earlier composition of the same instance.
    Node(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Composition {
    pub head: Child,
    pub dependent: Child,
    /// Leaves have depth 0.
    pub depth: usize,
}

/// Composition nodes of `tree` in the order the oracle reduces them. The
/// final attachment to the root composes nothing and is not included, so an
/// `n`-word tree has `n - 1` nodes.
pub fn compositions(tree: &DependencyTree) -> Vec<Composition> {
    let mut nodes: Vec<Composition> = Vec::with_capacity(tree.len().saturating_sub(1));
    let depth = |nodes: &[Composition], c: Child| match c {
        Child::Leaf(_) => 0,
        Child::Node(i) => nodes[i].depth,
    };
    let mut stack: Vec<Child> = Vec::new();
    let mut next_word = 1;
    for op in oracle(tree).0 {
        match op {
            ParserOp::Gen(_) => {
                stack.push(Child::Leaf(next_word));
                next_word += 1;
            }
            ParserOp::ReduceLeft | ParserOp::ReduceRight => {
                let top = stack.pop().expect("oracle sequences are valid");
                let Some(second) = stack.pop() else {
                    // onto the root
                    continue;
                };
                let (head, dependent) = if op == ParserOp::ReduceLeft {
                    (top, second)
                } else {
                    (second, top)
                };
                let d = 1 + depth(&nodes, head).max(depth(&nodes, dependent));
                stack.push(Child::Node(nodes.len()));
                nodes.push(Composition {
                    head,
                    dependent,
                    depth: d,
                });
            }
        }
    }
    nodes
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NodeGroup {
    pub depth: usize,
    /// `(instance, node)` pairs.
    pub members: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BatchPlan {
    /// Per-instance composition nodes.
    pub nodes: Vec<Vec<Composition>>,
    /// Groups in increasing depth; group `i` holds depth `i + 1`.
    pub groups: Vec<NodeGroup>,
}

impl BatchPlan {
    pub fn num_nodes(&self) -> usize {
        self.nodes.iter().map(Vec::len).sum()
    }
}

pub fn plan(trees: &[DependencyTree]) -> BatchPlan {
    let nodes: Vec<Vec<Composition>> = trees.iter().map(compositions).collect();
    let max_depth = nodes.iter().flatten().map(|c| c.depth).max().unwrap_or(0);
    let mut groups: Vec<NodeGroup> = (1..=max_depth)
        .map(|depth| NodeGroup {
            depth,
            members: Vec::new(),
        })
        .collect();
    for (inst, ns) in nodes.iter().enumerate() {
        for (id, c) in ns.iter().enumerate() {
            groups[c.depth - 1].members.push((inst, id));
        }
    }
    BatchPlan { nodes, groups }
}

fn lookup(leaves: &[Var], done: &[Option<Var>], c: Child) -> Var {
    match c {
        Child::Leaf(p) => leaves[p - 1],
        Child::Node(i) => done[i].expect("children are computed in earlier groups"),
    }
}

/// Evaluates every node of `plan`, one matrix product per group.
/// `leaves[i][p - 1]` is the embedding of word `p` of instance `i`. Returns
/// the node vectors of each instance in node order.
pub fn batched_compose<S: Real>(
    tape: &mut Tape<'_, S>,
    plan: &BatchPlan,
    leaves: &[Vec<Var>],
    w: Var,
    b: Var,
) -> Result<Vec<Vec<Var>>, TensorError> {
    let mut done: Vec<Vec<Option<Var>>> = plan.nodes.iter().map(|ns| vec![None; ns.len()]).collect();
    for group in &plan.groups {
        let mut rows = Vec::with_capacity(group.members.len());
        for &(inst, id) in &group.members {
            let c = plan.nodes[inst][id];
            let head = lookup(&leaves[inst], &done[inst], c.head);
            let dep = lookup(&leaves[inst], &done[inst], c.dependent);
            rows.push(tape.concat(&[head, dep])?);
        }
        let x = tape.stack(&rows)?;
        let y = tape.matmul_t(x, w)?;
        let y = tape.add_rows(y, b)?;
        let y = tape.tanh(y)?;
        for (r, &(inst, id)) in group.members.iter().enumerate() {
            done[inst][id] = Some(tape.row(y, r)?);
        }
    }
    Ok(done
        .into_iter()
        .map(|ns| ns.into_iter().map(|v| v.expect("every node is planned")).collect())
        .collect())
}

/// Reference evaluation: one composition at a time, in reduction order.
pub fn sequential_compose<S: Real>(
    tape: &mut Tape<'_, S>,
    nodes: &[Composition],
    leaves: &[Var],
    w: Var,
    b: Var,
) -> Result<Vec<Var>, TensorError> {
    let mut done: Vec<Option<Var>> = vec![None; nodes.len()];
    for (i, c) in nodes.iter().enumerate() {
        let head = lookup(leaves, &done, c.head);
        let dep = lookup(leaves, &done, c.dependent);
        done[i] = Some(compose(tape, w, b, head, dep)?);
    }
    Ok(done.into_iter().map(Option::unwrap).collect())
}
