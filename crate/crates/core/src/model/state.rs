use crate::autodiff::{LstmState, Var};
use crate::transition::StackState;

/// Neural decoder state paired with the symbolic parser state.
///
/// `tree_states[j]` is the stack-LSTM state after reading
/// `stack_reps[..=j]`, so popping the stack restores earlier states without
/// recomputation.
#[derive(Clone, Debug)]
pub struct DecoderState {
    pub symbolic: StackState,
    pub(crate) stack_reps: Vec<Var>,
    pub(crate) tree_states: Vec<LstmState>,
    pub(crate) seq: LstmState,
    pub(crate) hist: LstmState,
}

impl DecoderState {
    pub(crate) fn new(root: Var, tree: LstmState, seq: LstmState, hist: LstmState) -> Self {
        DecoderState {
            symbolic: StackState::new(),
            stack_reps: vec![root],
            tree_states: vec![tree],
            seq,
            hist,
        }
    }

    /// One vector per stack element, bottom (root) first.
    pub fn stack_reps(&self) -> &[Var] {
        &self.stack_reps
    }

    /// Partial-tree summary: last stack-LSTM hidden state.
    pub fn tree_h(&self) -> Var {
        self.tree_states.last().unwrap().h
    }

    /// Partial-summary state; unchanged by reductions.
    pub fn seq_h(&self) -> Var {
        self.seq.h
    }

    /// Operation-history state.
    pub fn hist_h(&self) -> Var {
        self.hist.h
    }

    pub fn is_terminal(&self) -> bool {
        self.symbolic.is_terminal()
    }
}
