//! Constrained beam search over the joint operation distribution.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape};
use crate::model::{DecoderState, EncoderStates, JointDistribution, JointOp, Model, ModelError};
use crate::transition::{execute, extract_summary, DependencyTree, ParserOp, TargetSequence, TransitionError};

/// Additive score adjustment for a candidate operation, given the
/// operations before it.
pub trait ScoreBias: Send + Sync {
    fn bias(&self, history: &[ParserOp], next: &ParserOp) -> f64;
}

#[derive(Clone)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub max_words: usize,
    /// Defaults to `2 * max_words`, the length of a complete derivation
    /// with `max_words` words.
    pub max_steps: Option<usize>,
    /// Completed hypotheses are ranked by `score / len^length_penalty`.
    pub length_penalty: f64,
    pub bias: Option<Arc<dyn ScoreBias>>,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 10,
            max_words: 60,
            max_steps: None,
            length_penalty: 0.0,
            bias: None,
        }
    }
}

impl fmt::Debug for BeamConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BeamConfig")
            .field("beam_size", &self.beam_size)
            .field("max_words", &self.max_words)
            .field("max_steps", &self.max_steps)
            .field("length_penalty", &self.length_penalty)
            .field("bias", &self.bias.is_some())
            .finish()
    }
}

impl BeamConfig {
    pub fn steps(&self) -> usize {
        self.max_steps.unwrap_or(2 * self.max_words).max(2)
    }
}

#[derive(Clone, Debug)]
pub struct Hypothesis {
    pub state: DecoderState,
    /// Sum of log-probabilities (plus bias) of the operations so far.
    pub score: f64,
}

impl Hypothesis {
    pub fn ops(&self) -> &[ParserOp] {
        self.state.symbolic.ops()
    }

    pub fn is_complete(&self) -> bool {
        self.state.is_terminal()
    }

    pub fn normalized_score(&self, length_penalty: f64) -> f64 {
        if length_penalty == 0.0 {
            self.score
        } else {
            self.score / (self.ops().len().max(1) as f64).powf(length_penalty)
        }
    }
}

/// A scored continuation of hypothesis `parent`, not yet applied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub parent: usize,
    pub op: JointOp,
    pub score: f64,
}

/// Ranks candidates best first; ties go to the earlier parent, then to the
/// operation order of [`JointOp`].
fn rank(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.parent.cmp(&b.parent))
        .then(a.op.cmp(&b.op))
}

fn distribution<S: Real>(
    model: &Model<S>,
    tape: &mut Tape<'_, S>,
    h: &Hypothesis,
    enc: &EncoderStates,
    config: &BeamConfig,
) -> Result<JointDistribution, ModelError> {
    model.joint_step_distribution(tape, &h.state, enc, config.max_words)
}

/// The `k` best valid continuations of `h`, best first.
pub fn expand<S: Real>(
    model: &Model<S>,
    tape: &mut Tape<'_, S>,
    h: &Hypothesis,
    parent: usize,
    enc: &EncoderStates,
    k: usize,
    config: &BeamConfig,
) -> Result<Vec<Candidate>, ModelError> {
    let dist = distribution(model, tape, h, enc, config)?;
    let mut out: Vec<Candidate> = match &config.bias {
        None => dist
            .top_k(k)
            .into_iter()
            .map(|(op, p)| Candidate {
                parent,
                op,
                score: h.score + p.ln(),
            })
            .collect(),
        Some(bias) => dist
            .ranked()
            .into_iter()
            .map(|(op, p)| {
                let next = op.to_parser_op(&enc.vocab, model.output_vocab());
                Candidate {
                    parent,
                    op,
                    score: h.score + p.ln() + bias.bias(h.ops(), &next),
                }
            })
            .collect(),
    };
    out.sort_by(rank);
    out.truncate(k);
    Ok(out)
}

fn apply<S: Real>(
    model: &Model<S>,
    tape: &mut Tape<'_, S>,
    h: &Hypothesis,
    c: &Candidate,
    enc: &EncoderStates,
) -> Result<Hypothesis, ModelError> {
    let op = c.op.to_parser_op(&enc.vocab, model.output_vocab());
    Ok(Hypothesis {
        state: model.advance(tape, &h.state, &op)?,
        score: c.score,
    })
}

/// Appends the most probable valid reductions until `h` is complete.
fn force_complete<S: Real>(
    model: &Model<S>,
    tape: &mut Tape<'_, S>,
    mut h: Hypothesis,
    enc: &EncoderStates,
    config: &BeamConfig,
) -> Result<Hypothesis, ModelError> {
    while !h.is_complete() {
        let dist = distribution(model, tape, &h, enc, config)?;
        let valid = h.state.symbolic.valid_ops(0);
        let unmasked_reduce = |p: f64| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
        let (op, score) = [
            (JointOp::ReduceLeft, dist.reduce_left, valid.reduce_left),
            (JointOp::ReduceRight, dist.reduce_right, valid.reduce_right),
        ]
        .into_iter()
        .filter(|&(_, _, ok)| ok)
        .map(|(op, p, _)| (op, unmasked_reduce(p)))
        .fold(None::<(JointOp, f64)>, |acc, x| match acc {
            Some(a) if a.1 >= x.1 => Some(a),
            _ => Some(x),
        })
        .expect("a non-terminal state with words can always reduce");
        let c = Candidate {
            parent: 0,
            op,
            score: h.score + score,
        };
        h = apply(model, tape, &h, &c, enc)?;
    }
    Ok(h)
}

/// Standard beam search: the `K` best live hypotheses are kept, terminal
/// ones move to a finished pool, and search stops once no live hypothesis
/// can beat the best finished one or the step cap is reached.
pub fn beam_search<S: Real>(
    model: &Model<S>,
    source: &[String],
    config: &BeamConfig,
) -> Result<Hypothesis, ModelError> {
    assert!(config.beam_size >= 1 && config.max_words >= 1);
    let mut tape = model.tape();
    let enc = model.encode(&mut tape, source)?;
    let mut live = vec![Hypothesis {
        state: model.initial_state(&mut tape)?,
        score: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let best_finished = |f: &[Hypothesis]| {
        f.iter()
            .map(|h| h.normalized_score(config.length_penalty))
            .fold(f64::NEG_INFINITY, f64::max)
    };

    for _ in 0..config.steps() {
        if live.is_empty() {
            break;
        }
        let mut cands = Vec::with_capacity(live.len() * config.beam_size);
        for (i, h) in live.iter().enumerate() {
            cands.extend(expand(model, &mut tape, h, i, &enc, config.beam_size, config)?);
        }
        cands.sort_by(rank);
        cands.truncate(config.beam_size);
        let mut next = Vec::with_capacity(cands.len());
        for c in &cands {
            let h = apply(model, &mut tape, &live[c.parent], c, &enc)?;
            if h.is_complete() {
                finished.push(h);
            } else {
                next.push(h);
            }
        }
        live = next;
        if !finished.is_empty() {
            let target = best_finished(&finished);
            if live.iter().all(|h| h.normalized_score(config.length_penalty) <= target) {
                break;
            }
        }
    }

    if finished.is_empty() {
        let best = live
            .into_iter()
            .reduce(|a, b| if b.score > a.score { b } else { a })
            .expect("the beam is never empty before completion");
        return force_complete(model, &mut tape, best, &enc, config);
    }
    // first finished wins ties
    Ok(finished
        .into_iter()
        .reduce(|a, b| {
            if b.normalized_score(config.length_penalty) > a.normalized_score(config.length_penalty) {
                b
            } else {
                a
            }
        })
        .unwrap())
}

/// Follows the single most probable valid operation at every step.
pub fn greedy<S: Real>(model: &Model<S>, source: &[String], max_words: usize) -> Result<Hypothesis, ModelError> {
    let mut tape = model.tape();
    let enc = model.encode(&mut tape, source)?;
    let mut h = Hypothesis {
        state: model.initial_state(&mut tape)?,
        score: 0.0,
    };
    while !h.is_complete() {
        let dist = model.joint_step_distribution(&mut tape, &h.state, &enc, max_words)?;
        let (op, p) = dist.argmax().expect("some operation is valid");
        let c = Candidate {
            parent: 0,
            op,
            score: h.score + p.ln(),
        };
        h = apply(model, &mut tape, &h, &c, &enc)?;
    }
    Ok(h)
}

/// The summary and its tree.
pub fn decode_output(ops: &[ParserOp]) -> Result<(Vec<String>, DependencyTree), TransitionError> {
    let tree = execute(&TargetSequence(ops.to_vec()))?;
    let summary = extract_summary(ops);
    debug_assert_eq!(tree.words(), &summary[..]);
    Ok((summary, tree))
}

/// One line of decoder output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub summary: String,
    pub ops: String,
    /// Space-separated head positions, `0` for the root.
    pub heads: String,
    pub score: f64,
}

impl DecodeRecord {
    pub fn from_hypothesis(h: &Hypothesis) -> Result<Self, TransitionError> {
        let (summary, tree) = decode_output(h.ops())?;
        Ok(DecodeRecord {
            summary: summary.join(" "),
            ops: TargetSequence(h.ops().to_vec()).to_string(),
            heads: tree.heads().iter().map(usize::to_string).collect::<Vec<_>>().join(" "),
            score: h.score,
        })
    }

    pub fn tree(&self) -> Result<DependencyTree, TransitionError> {
        let ops: TargetSequence = self.ops.parse()?;
        execute(&ops)
    }
}

/// Decodes every source with `workers` threads; output order follows input.
pub fn decode_all<S: Real>(
    model: &Model<S>,
    sources: &[Vec<String>],
    config: &BeamConfig,
    workers: usize,
) -> Result<Vec<DecodeRecord>, ModelError> {
    let one = |src: &Vec<String>| -> Result<DecodeRecord, ModelError> {
        let h = beam_search(model, src, config)?;
        Ok(DecodeRecord::from_hypothesis(&h)?)
    };
    if workers <= 1 {
        return sources.iter().map(one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    pool.install(|| sources.par_iter().map(one).collect())
}
