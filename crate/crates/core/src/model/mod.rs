//! The joint summarize-and-parse network.
//!
//! * a bidirectional multi-layer LSTM encodes the source;
//! * a stack-LSTM reads the partial trees on the parser stack, each tree
//!   represented by recursively composing head and dependent vectors;
//! * a sequential LSTM reads the summary words generated so far;
//! * a third LSTM reads the history of operation kinds;
//! * attention over the source, keyed by the tree and summary states, feeds
//!   an operation classifier and a word generator with a copy switch.

mod distribution;
mod state;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{
    load_checkpoint, lstm_cell, save_checkpoint, CheckpointError, LstmParams, LstmState, ParamId, ParamStore, Real,
    Tape, TensorError, Var,
};
use crate::corpus::vocab::{Vocabulary, UNK};
use crate::transition::{OpKind, ParserOp, TransitionError};

pub use distribution::{JointDistribution, JointOp, SourceVocab};
pub use state::DecoderState;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("empty source text")]
    EmptySource,
    #[error("source has {len} tokens, limit is {max}")]
    SourceTooLong { len: usize, max: usize },
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_size: usize,
    /// Width of word embeddings and composed tree vectors.
    pub embed_size: usize,
    pub op_embed_size: usize,
    pub encoder_layers: usize,
    pub max_source_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_size: 256,
            embed_size: 256,
            op_embed_size: 32,
            encoder_layers: 2,
            max_source_len: 100,
        }
    }
}

impl ModelConfig {
    pub fn with_hidden(hidden_size: usize) -> Self {
        ModelConfig {
            hidden_size,
            embed_size: hidden_size,
            op_embed_size: hidden_size.min(32),
            ..ModelConfig::default()
        }
    }
}

#[derive(Clone, Debug)]
struct ParamIds {
    src_embed: ParamId,
    encoder: Vec<(LstmParams, LstmParams)>,
    word_embed: ParamId,
    root_embed: ParamId,
    compose_w: ParamId,
    compose_b: ParamId,
    tree_lstm: LstmParams,
    seq_lstm: LstmParams,
    seq_h0: ParamId,
    seq_c0: ParamId,
    op_embed: ParamId,
    hist_lstm: LstmParams,
    hist_h0: ParamId,
    hist_c0: ParamId,
    attn_dec: ParamId,
    attn_enc: ParamId,
    attn_v: ParamId,
    op_hidden_w: ParamId,
    op_hidden_b: ParamId,
    op_out: ParamId,
    word_hidden_w: ParamId,
    word_hidden_b: ParamId,
    word_out: ParamId,
    switch_w: ParamId,
    switch_b: ParamId,
}

/// Per-token source encodings.
#[derive(Clone, Debug)]
pub struct EncoderStates {
    pub tokens: Vec<String>,
    /// One `2h` vector per source token (forward ‖ backward, top layer).
    pub states: Vec<Var>,
    /// `states` stacked into an `[n, 2h]` matrix.
    pub matrix: Var,
    /// Attention keys, `matrix × W_encᵀ`, `[n, h]`.
    pub keys: Var,
    pub vocab: SourceVocab,
}

impl EncoderStates {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ContextVector {
    pub context: Var,
    pub alpha: Var,
}

/// Word-generation factors for one step.
#[derive(Clone, Copy, Debug)]
pub struct WordDistribution {
    /// Probability of generating from the vocabulary rather than copying.
    pub switch: Var,
    /// Softmax over the output vocabulary.
    pub vocab_probs: Var,
    /// Attention over source positions.
    pub alpha: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    pub context: ContextVector,
    /// Distribution over `OpKind::ALL`.
    pub op_probs: Var,
    pub word: WordDistribution,
}

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    config: ModelConfig,
    input_vocab: Vocabulary,
    output_vocab: Vocabulary,
    input_fingerprint: u64,
    output_fingerprint: u64,
}

pub struct Model<S: Real> {
    config: ModelConfig,
    params: ParamStore<S>,
    ids: ParamIds,
    input_vocab: Vocabulary,
    output_vocab: Vocabulary,
}

impl<S: Real> Model<S> {
    pub fn new(config: ModelConfig, input_vocab: Vocabulary, output_vocab: Vocabulary, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let (h, e) = (config.hidden_size, config.embed_size);
        let r = &mut rng;

        let src_embed = p.add_uniform("src_embed", vec![input_vocab.len(), e], r);
        let encoder = (0..config.encoder_layers)
            .map(|l| {
                let input = if l == 0 { e } else { 2 * h };
                (
                    LstmParams::register(&mut p, &format!("encoder.{l}.fwd"), input, h, r),
                    LstmParams::register(&mut p, &format!("encoder.{l}.bwd"), input, h, r),
                )
            })
            .collect();
        let word_embed = p.add_uniform("word_embed", vec![output_vocab.len(), e], r);
        let root_embed = p.add_uniform("root_embed", vec![e], r);
        let compose_w = p.add_uniform("compose.weight", vec![e, 2 * e], r);
        let compose_b = p.add_zeros("compose.bias", vec![e]);
        let tree_lstm = LstmParams::register(&mut p, "tree_lstm", e, h, r);
        let seq_lstm = LstmParams::register(&mut p, "seq_lstm", e, h, r);
        let seq_h0 = p.add_zeros("seq_lstm.h0", vec![h]);
        let seq_c0 = p.add_zeros("seq_lstm.c0", vec![h]);
        let op_embed = p.add_uniform("op_embed", vec![OpKind::ALL.len(), config.op_embed_size], r);
        let hist_lstm = LstmParams::register(&mut p, "hist_lstm", config.op_embed_size, h, r);
        let hist_h0 = p.add_zeros("hist_lstm.h0", vec![h]);
        let hist_c0 = p.add_zeros("hist_lstm.c0", vec![h]);
        let attn_dec = p.add_uniform("attn.dec", vec![h, 2 * h], r);
        let attn_enc = p.add_uniform("attn.enc", vec![h, 2 * h], r);
        let attn_v = p.add_uniform("attn.v", vec![h], r);
        let op_hidden_w = p.add_uniform("op.hidden.weight", vec![h, 4 * h], r);
        let op_hidden_b = p.add_zeros("op.hidden.bias", vec![h]);
        let op_out = p.add_uniform("op.out", vec![OpKind::ALL.len(), h], r);
        let word_hidden_w = p.add_uniform("word.hidden.weight", vec![h, 4 * h], r);
        let word_hidden_b = p.add_zeros("word.hidden.bias", vec![h]);
        let word_out = p.add_uniform("word.out", vec![output_vocab.len(), h], r);
        let switch_w = p.add_uniform("switch.weight", vec![1, 4 * h], r);
        let switch_b = p.add_zeros("switch.bias", vec![1]);

        Model {
            ids: ParamIds {
                src_embed,
                encoder,
                word_embed,
                root_embed,
                compose_w,
                compose_b,
                tree_lstm,
                seq_lstm,
                seq_h0,
                seq_c0,
                op_embed,
                hist_lstm,
                hist_h0,
                hist_c0,
                attn_dec,
                attn_enc,
                attn_v,
                op_hidden_w,
                op_hidden_b,
                op_out,
                word_hidden_w,
                word_hidden_b,
                word_out,
                switch_w,
                switch_b,
            },
            config,
            params: p,
            input_vocab,
            output_vocab,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    pub fn input_vocab(&self) -> &Vocabulary {
        &self.input_vocab
    }

    pub fn output_vocab(&self) -> &Vocabulary {
        &self.output_vocab
    }

    pub fn tape(&self) -> Tape<'_, S> {
        Tape::new(&self.params)
    }

    pub fn compose_params(&self) -> (ParamId, ParamId) {
        (self.ids.compose_w, self.ids.compose_b)
    }

    /// Same architecture with every parameter set to zero.
    pub fn zeroed(mut self) -> Self {
        for p in self.params.iter_mut() {
            p.value.data_mut().fill(S::zero());
        }
        self
    }

    /// Converts the parameters to another element type.
    pub fn cast<T: Real>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            ids: self.ids.clone(),
            input_vocab: self.input_vocab.clone(),
            output_vocab: self.output_vocab.clone(),
        }
    }

    pub fn set_params(&mut self, params: ParamStore<S>) -> Result<(), ModelError> {
        for (mine, theirs) in self.params.iter().zip(params.iter()) {
            if mine.name != theirs.name || mine.value.shape() != theirs.value.shape() {
                return Err(ModelError::Incompatible(format!(
                    "parameter {} {:?} vs {} {:?}",
                    mine.name,
                    mine.value.shape(),
                    theirs.name,
                    theirs.value.shape()
                )));
            }
        }
        if self.params.len() != params.len() {
            return Err(ModelError::Incompatible(format!(
                "{} parameters expected, found {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    fn metadata(&self) -> String {
        serde_json::to_string(&Metadata {
            config: self.config.clone(),
            input_vocab: self.input_vocab.clone(),
            output_vocab: self.output_vocab.clone(),
            input_fingerprint: self.input_vocab.fingerprint(),
            output_fingerprint: self.output_vocab.fingerprint(),
        })
        .expect("metadata serializes")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        crate::autodiff::write_checkpoint(&self.params, &self.metadata())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let (params, meta) = crate::autodiff::read_checkpoint(bytes)?;
        Self::from_parts(params, &meta)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        save_checkpoint(path, &self.params, &self.metadata())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let (params, meta) = load_checkpoint(path)?;
        Self::from_parts(params, &meta)
    }

    fn from_parts(params: ParamStore<S>, meta: &str) -> Result<Self, ModelError> {
        let meta: Metadata = serde_json::from_str(meta).map_err(|e| ModelError::Incompatible(e.to_string()))?;
        if meta.input_vocab.fingerprint() != meta.input_fingerprint
            || meta.output_vocab.fingerprint() != meta.output_fingerprint
        {
            return Err(ModelError::Incompatible("vocabulary fingerprint mismatch".into()));
        }
        let mut model = Model::new(meta.config, meta.input_vocab, meta.output_vocab, 0);
        model.set_params(params)?;
        Ok(model)
    }

    /// Runs the bidirectional encoder. Tokens outside the input vocabulary
    /// read the `UNK` embedding.
    pub fn encode(&self, tape: &mut Tape<'_, S>, source: &[String]) -> Result<EncoderStates, ModelError> {
        if source.is_empty() {
            return Err(ModelError::EmptySource);
        }
        if source.len() > self.config.max_source_len {
            return Err(ModelError::SourceTooLong {
                len: source.len(),
                max: self.config.max_source_len,
            });
        }
        let h = self.config.hidden_size;
        let table = tape.param(self.ids.src_embed);
        let mut layer: Vec<Var> = source
            .iter()
            .map(|w| tape.row(table, self.input_vocab.id(w)))
            .collect::<Result<_, _>>()?;
        for (fwd, bwd) in &self.ids.encoder {
            let mut forward = Vec::with_capacity(layer.len());
            let mut s = LstmState::zeros(tape, h);
            for &x in &layer {
                s = lstm_cell(tape, x, s, fwd)?;
                forward.push(s.h);
            }
            let mut backward = vec![s.h; layer.len()];
            let mut s = LstmState::zeros(tape, h);
            for (i, &x) in layer.iter().enumerate().rev() {
                s = lstm_cell(tape, x, s, bwd)?;
                backward[i] = s.h;
            }
            layer = forward
                .into_iter()
                .zip(backward)
                .map(|(f, b)| tape.concat(&[f, b]))
                .collect::<Result<_, _>>()?;
        }
        self.encoder_states(tape, source, layer)
    }

    /// Packages per-token vectors (of width `2h`) for attention.
    pub fn encoder_states(
        &self,
        tape: &mut Tape<'_, S>,
        source: &[String],
        states: Vec<Var>,
    ) -> Result<EncoderStates, ModelError> {
        let matrix = tape.stack(&states)?;
        let w_enc = tape.param(self.ids.attn_enc);
        let keys = tape.matmul_t(matrix, w_enc)?;
        Ok(EncoderStates {
            tokens: source.to_vec(),
            states,
            matrix,
            keys,
            vocab: SourceVocab::new(source, &self.output_vocab),
        })
    }

    /// Merges a head and a dependent tree vector into a new head vector.
    pub fn compose(&self, tape: &mut Tape<'_, S>, head: Var, dependent: Var) -> Result<Var, ModelError> {
        let w = tape.param(self.ids.compose_w);
        let b = tape.param(self.ids.compose_b);
        Ok(compose(tape, w, b, head, dependent)?)
    }

    /// Embedding pushed by `GEN(w)`; out-of-vocabulary words use `UNK`.
    pub fn word_embedding(&self, tape: &mut Tape<'_, S>, word: &str) -> Result<Var, ModelError> {
        let table = tape.param(self.ids.word_embed);
        Ok(tape.row(table, self.output_vocab.id(word))?)
    }

    pub fn root_embedding(&self, tape: &mut Tape<'_, S>) -> Var {
        tape.param(self.ids.root_embed)
    }

    /// One stack-LSTM step on top of `prev` (or the zero state).
    pub fn tree_lstm_step(
        &self,
        tape: &mut Tape<'_, S>,
        rep: Var,
        prev: Option<LstmState>,
    ) -> Result<LstmState, ModelError> {
        let prev = match prev {
            Some(s) => s,
            None => LstmState::zeros(tape, self.config.hidden_size),
        };
        Ok(lstm_cell(tape, rep, prev, &self.ids.tree_lstm)?)
    }

    /// Runs the tree LSTM over a list of stack representations from the zero
    /// state. Returns the last hidden state.
    pub fn tree_state_from_scratch(&self, tape: &mut Tape<'_, S>, reps: &[Var]) -> Result<Var, ModelError> {
        let mut s = None;
        for &r in reps {
            s = Some(self.tree_lstm_step(tape, r, s)?);
        }
        s.map(|s| s.h)
            .ok_or(ModelError::Tensor(TensorError::Empty("tree_state")))
    }

    pub fn initial_state(&self, tape: &mut Tape<'_, S>) -> Result<DecoderState, ModelError> {
        let root = self.root_embedding(tape);
        let tree = self.tree_lstm_step(tape, root, None)?;
        let seq = LstmState {
            h: tape.param(self.ids.seq_h0),
            c: tape.param(self.ids.seq_c0),
        };
        let hist = LstmState {
            h: tape.param(self.ids.hist_h0),
            c: tape.param(self.ids.hist_c0),
        };
        Ok(DecoderState::new(root, tree, seq, hist))
    }

    /// Applies `op` to the symbolic and neural state. `rep` overrides the
    /// vector pushed for the op (the word embedding for `GEN`, the composed
    /// tree for a word-word reduction); it is ignored for the final
    /// reduction onto the root, which composes nothing.
    pub fn advance_with(
        &self,
        tape: &mut Tape<'_, S>,
        state: &DecoderState,
        op: &ParserOp,
        rep: Option<Var>,
    ) -> Result<DecoderState, ModelError> {
        let symbolic = state.symbolic.apply_op(op)?;
        let op_table = tape.param(self.ids.op_embed);
        let op_vec = tape.row(op_table, op.kind().index())?;
        let hist = lstm_cell(tape, op_vec, state.hist, &self.ids.hist_lstm)?;

        let mut next = state.clone();
        next.symbolic = symbolic;
        next.hist = hist;
        match op {
            ParserOp::Gen(w) => {
                let e = match rep {
                    Some(r) => r,
                    None => self.word_embedding(tape, w)?,
                };
                next.seq = lstm_cell(tape, e, state.seq, &self.ids.seq_lstm)?;
                let top = *next.tree_states.last().unwrap();
                let s = self.tree_lstm_step(tape, e, Some(top))?;
                next.stack_reps.push(e);
                next.tree_states.push(s);
            }
            ParserOp::ReduceLeft | ParserOp::ReduceRight => {
                let top = next.stack_reps.pop().unwrap();
                next.tree_states.pop();
                if next.stack_reps.len() == 1 {
                    // reduction onto the root: nothing is composed
                    debug_assert!(next.symbolic.is_terminal());
                    return Ok(next);
                }
                let second = next.stack_reps.pop().unwrap();
                next.tree_states.pop();
                let (head, dep) = if matches!(op, ParserOp::ReduceLeft) {
                    (top, second)
                } else {
                    (second, top)
                };
                let merged = match rep {
                    Some(r) => r,
                    None => self.compose(tape, head, dep)?,
                };
                let below = *next.tree_states.last().unwrap();
                let s = self.tree_lstm_step(tape, merged, Some(below))?;
                next.stack_reps.push(merged);
                next.tree_states.push(s);
            }
        }
        Ok(next)
    }

    pub fn advance(
        &self,
        tape: &mut Tape<'_, S>,
        state: &DecoderState,
        op: &ParserOp,
    ) -> Result<DecoderState, ModelError> {
        self.advance_with(tape, state, op, None)
    }

    /// Attention over the source keyed by `[h_tree ‖ h_seq]`.
    pub fn attend(
        &self,
        tape: &mut Tape<'_, S>,
        tree_h: Var,
        seq_h: Var,
        enc: &EncoderStates,
    ) -> Result<ContextVector, ModelError> {
        let w_dec = tape.param(self.ids.attn_dec);
        let v = tape.param(self.ids.attn_v);
        let query_in = tape.concat(&[tree_h, seq_h])?;
        let query = tape.matmul(w_dec, query_in)?;
        let pre = tape.add_rows(enc.keys, query)?;
        let act = tape.tanh(pre)?;
        let scores = tape.matmul(act, v)?;
        let alpha = tape.softmax(scores)?;
        let context = tape.matmul(alpha, enc.matrix)?;
        Ok(ContextVector { context, alpha })
    }

    /// Distribution over `OpKind::ALL`.
    pub fn predict_op(
        &self,
        tape: &mut Tape<'_, S>,
        tree_h: Var,
        hist_h: Var,
        context: Var,
    ) -> Result<Var, ModelError> {
        let w = tape.param(self.ids.op_hidden_w);
        let b = tape.param(self.ids.op_hidden_b);
        let out = tape.param(self.ids.op_out);
        let x = tape.concat(&[tree_h, hist_h, context])?;
        let hidden = tape.matmul(w, x)?;
        let hidden = tape.add(hidden, b)?;
        let hidden = tape.tanh(hidden)?;
        let logits = tape.matmul(out, hidden)?;
        Ok(tape.softmax(logits)?)
    }

    pub fn predict_word(
        &self,
        tape: &mut Tape<'_, S>,
        seq_h: Var,
        tree_h: Var,
        ctx: ContextVector,
    ) -> Result<WordDistribution, ModelError> {
        let x = tape.concat(&[seq_h, tree_h, ctx.context])?;
        let zw = tape.param(self.ids.switch_w);
        let zb = tape.param(self.ids.switch_b);
        let z = tape.matmul(zw, x)?;
        let z = tape.add(z, zb)?;
        let switch = tape.sigmoid(z)?;

        let w = tape.param(self.ids.word_hidden_w);
        let b = tape.param(self.ids.word_hidden_b);
        let out = tape.param(self.ids.word_out);
        let hidden = tape.matmul(w, x)?;
        let hidden = tape.add(hidden, b)?;
        let hidden = tape.tanh(hidden)?;
        let logits = tape.matmul(out, hidden)?;
        let vocab_probs = tape.softmax(logits)?;
        Ok(WordDistribution {
            switch,
            vocab_probs,
            alpha: ctx.alpha,
        })
    }

    /// All per-step predictions from the current decoder state.
    pub fn step(
        &self,
        tape: &mut Tape<'_, S>,
        state: &DecoderState,
        enc: &EncoderStates,
    ) -> Result<StepOutput, ModelError> {
        let context = self.attend(tape, state.tree_h(), state.seq_h(), enc)?;
        let op_probs = self.predict_op(tape, state.tree_h(), state.hist_h(), context.context)?;
        let word = self.predict_word(tape, state.seq_h(), state.tree_h(), context)?;
        Ok(StepOutput {
            context,
            op_probs,
            word,
        })
    }

    /// Differentiable probability of emitting `word`: the switch-weighted
    /// vocabulary probability plus the copy mass summed over every source
    /// occurrence. A word neither in the vocabulary nor in the source is
    /// scored through `UNK`.
    pub fn word_prob(
        &self,
        tape: &mut Tape<'_, S>,
        dist: &WordDistribution,
        enc: &EncoderStates,
        word: &str,
    ) -> Result<Var, ModelError> {
        let positions = enc.vocab.positions(word);
        let gen_id = match self.output_vocab.word_id(word) {
            Some(id) => Some(id),
            None if positions.is_empty() => Some(UNK),
            None => None,
        };
        let mut terms = Vec::with_capacity(2);
        if let Some(id) = gen_id {
            let p = tape.gather(dist.vocab_probs, &[id])?;
            terms.push(tape.mul(dist.switch, p)?);
        }
        if !positions.is_empty() {
            let picked = tape.gather(dist.alpha, &positions)?;
            let mass = tape.sum(picked)?;
            let copy = tape.rsub(S::one(), dist.switch)?;
            terms.push(tape.mul(copy, mass)?);
        }
        Ok(tape.add_all(&terms)?)
    }

    /// Full distribution over the output vocabulary extended with the
    /// source's out-of-vocabulary tokens (see [`SourceVocab`]).
    pub fn word_distribution_values(
        &self,
        tape: &Tape<'_, S>,
        dist: &WordDistribution,
        enc: &EncoderStates,
    ) -> Vec<f64> {
        let lambda = tape.scalar(dist.switch).f64();
        let mut probs: Vec<f64> = tape.value(dist.vocab_probs).iter().map(|p| lambda * p.f64()).collect();
        probs.resize(enc.vocab.len(), 0.0);
        for (i, &a) in tape.value(dist.alpha).iter().enumerate() {
            probs[enc.vocab.source_ids()[i]] += (1.0 - lambda) * a.f64();
        }
        probs
    }

    /// Joint distribution over `REDUCE-L`, `REDUCE-R` and `GEN(w)` for every
    /// word of the extended vocabulary, without masking.
    pub fn joint_unmasked(&self, tape: &Tape<'_, S>, out: &StepOutput, enc: &EncoderStates) -> JointDistribution {
        let ops = tape.value(out.op_probs);
        let p_gen = ops[OpKind::Gen.index()].f64();
        let gen = self
            .word_distribution_values(tape, &out.word, enc)
            .into_iter()
            .map(|p| p_gen * p)
            .collect();
        JointDistribution {
            reduce_left: ops[OpKind::ReduceLeft.index()].f64(),
            reduce_right: ops[OpKind::ReduceRight.index()].f64(),
            gen,
        }
    }

    /// Masked, renormalized joint distribution for the next operation.
    pub fn joint_step_distribution(
        &self,
        tape: &mut Tape<'_, S>,
        state: &DecoderState,
        enc: &EncoderStates,
        max_words: usize,
    ) -> Result<JointDistribution, ModelError> {
        let valid = state.symbolic.valid_ops(max_words);
        if valid.complete {
            return Err(TransitionError::InvalidOp {
                op: "any".into(),
                detail: "the derivation is already complete".into(),
            }
            .into());
        }
        let out = self.step(tape, state, enc)?;
        Ok(self.joint_unmasked(tape, &out, enc).masked(&valid))
    }
}

/// `tanh(W [head ‖ dependent] + b)`.
pub fn compose<S: Real>(tape: &mut Tape<'_, S>, w: Var, b: Var, head: Var, dependent: Var) -> Result<Var, TensorError> {
    let x = tape.concat(&[head, dependent])?;
    let y = tape.matmul(w, x)?;
    let y = tape.add(y, b)?;
    tape.tanh(y)
}
