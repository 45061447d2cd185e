//! Teacher-forced training.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{backward, ParamStore, Real, Tape, TensorError, Var};
use crate::batching::{batched_compose, plan};
use crate::corpus::vocab::SPECIALS;
use crate::corpus::Example;
use crate::model::{Model, ModelError};
use crate::transition::{oracle, DependencyTree, OpKind, ParserOp, TargetSequence, TransitionError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no training instances")]
    EmptyCorpus,
    #[error("epoch {epoch}, batch {batch}: {source}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        #[source]
        source: ModelError,
    },
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(e.into())
    }
}

impl From<TransitionError> for TrainError {
    fn from(e: TransitionError) -> Self {
        TrainError::Model(e.into())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Gradients are clamped into `[-grad_clip, grad_clip]` elementwise.
    pub grad_clip: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Epochs without dev-loss improvement before stopping; 0 disables.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 5.0,
            weight_decay: 1e-6,
            epochs: 30,
            patience: 3,
            seed: 1,
        }
    }
}

/// A source paired with its gold tree and oracle sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub source: Vec<String>,
    pub tree: DependencyTree,
    pub ops: TargetSequence,
}

impl Instance {
    pub fn new(source: Vec<String>, tree: DependencyTree) -> Self {
        let ops = oracle(&tree);
        Instance { source, tree, ops }
    }

    pub fn from_example(ex: &Example) -> Result<Self, TransitionError> {
        Ok(Instance::new(ex.source.clone(), ex.tree()?))
    }
}

/// Extra options for [`sequence_loss`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LossOptions {
    /// Renormalize the operation distribution over the kinds valid in the
    /// current state (with this word cap) before scoring.
    pub mask_ops: Option<usize>,
}

/// The two halves of the negative log-likelihood.
#[derive(Clone, Copy, Debug)]
pub struct Loss {
    pub total: Var,
    pub op: Var,
    pub word: Var,
}

fn neg_log<S: Real>(tape: &mut Tape<'_, S>, p: Var) -> Result<Var, TensorError> {
    let l = tape.log(p)?;
    tape.rsub(S::zero(), l)
}

/// Negative log-likelihood of one gold sequence under teacher forcing.
/// `nodes` optionally supplies precomputed vectors for the word-word
/// reductions, in reduction order (see [`crate::batching`]).
pub fn sequence_loss<S: Real>(
    model: &Model<S>,
    tape: &mut Tape<'_, S>,
    inst: &Instance,
    nodes: Option<&[Var]>,
    options: LossOptions,
) -> Result<Loss, ModelError> {
    let enc = model.encode(tape, &inst.source)?;
    let mut state = model.initial_state(tape)?;
    let mut op_terms = Vec::with_capacity(inst.ops.len());
    let mut word_terms = Vec::new();
    let mut next_node = 0;
    for op in inst.ops.ops() {
        let out = model.step(tape, &state, &enc)?;
        let kind = op.kind().index();
        let p = tape.gather(out.op_probs, &[kind])?;
        let mut nll = neg_log(tape, p)?;
        if let Some(max_words) = options.mask_ops {
            let valid: Vec<usize> = state
                .symbolic
                .valid_ops(max_words)
                .kinds()
                .iter()
                .map(|k| k.index())
                .collect();
            let z = tape.gather(out.op_probs, &valid)?;
            let z = tape.sum(z)?;
            let log_z = tape.log(z)?;
            nll = tape.add(nll, log_z)?;
        }
        op_terms.push(nll);

        let rep = match op {
            ParserOp::Gen(w) => {
                if model.output_vocab().word_id(w).is_none() && enc.vocab.positions(w).is_empty() {
                    log::debug!("gold word {w:?} is scored as UNK");
                }
                let p = model.word_prob(tape, &out.word, &enc, w)?;
                word_terms.push(neg_log(tape, p)?);
                None
            }
            _ if state.symbolic.depth() > 2 => {
                let r = nodes.map(|n| n[next_node]);
                next_node += 1;
                r
            }
            _ => None,
        };
        state = model.advance_with(tape, &state, op, rep)?;
    }
    assert!(state.is_terminal(), "gold sequences end in a terminal state");
    let op = tape.add_all(&op_terms)?;
    let word = tape.add_all(&word_terms)?;
    let total = tape.add(op, word)?;
    Ok(Loss { total, op, word })
}

/// Mean per-instance loss of a batch; compositions are evaluated level by
/// level across the whole batch.
pub fn batch_loss<S: Real>(model: &Model<S>, tape: &mut Tape<'_, S>, batch: &[Instance]) -> Result<Var, ModelError> {
    if batch.is_empty() {
        return Err(TensorError::Empty("batch").into());
    }
    let trees: Vec<DependencyTree> = batch.iter().map(|i| i.tree.clone()).collect();
    let p = plan(&trees);
    let mut leaves = Vec::with_capacity(batch.len());
    for inst in batch {
        let ls = inst
            .tree
            .words()
            .iter()
            .map(|w| model.word_embedding(tape, w))
            .collect::<Result<Vec<_>, _>>()?;
        leaves.push(ls);
    }
    let (w, b) = model.compose_params();
    let (w, b) = (tape.param(w), tape.param(b));
    let nodes = batched_compose(tape, &p, &leaves, w, b)?;
    let mut losses = Vec::with_capacity(batch.len());
    for (inst, ns) in batch.iter().zip(&nodes) {
        losses.push(sequence_loss(model, tape, inst, Some(ns), LossOptions::default())?.total);
    }
    let sum = tape.add_all(&losses)?;
    let k = tape.constant(vec![S::c(1.0 / batch.len() as f64)]);
    Ok(tape.scale(sum, k)?)
}

/// Clamps every gradient coordinate into `[-limit, limit]`.
pub fn clip_gradients<S: Real>(params: &mut ParamStore<S>, limit: f64) {
    let (lo, hi) = (S::c(-limit), S::c(limit));
    for p in params.iter_mut() {
        for g in p.grad.data_mut() {
            *g = g.max(lo).min(hi);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    pub step: u64,
}

impl<S: Real> AdamState<S> {
    pub fn new(params: &ParamStore<S>) -> Self {
        let zeros: Vec<Vec<S>> = params.iter().map(|p| vec![S::zero(); p.value.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One Adam update with bias correction. Weight decay shrinks each value by
/// `1 - lr * weight_decay` before the moment-based step.
pub fn adam_step<S: Real>(params: &mut ParamStore<S>, state: &mut AdamState<S>, config: &TrainConfig) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (S::c(config.beta1), S::c(config.beta2));
    let c1 = S::one() - b1.powi(t);
    let c2 = S::one() - b2.powi(t);
    let lr = S::c(config.lr);
    let eps = S::c(config.eps);
    let shrink = S::one() - lr * S::c(config.weight_decay);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let grad = p.grad.data().to_vec();
        for (j, x) in p.value.data_mut().iter_mut().enumerate() {
            let g = grad[j];
            m[j] = b1 * m[j] + (S::one() - b1) * g;
            v[j] = b2 * v[j] + (S::one() - b2) * g * g;
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            *x = *x * shrink - lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// One optimizer step on a batch. Returns the batch loss.
pub fn train_step<S: Real>(
    model: &mut Model<S>,
    adam: &mut AdamState<S>,
    batch: &[Instance],
    config: &TrainConfig,
) -> Result<f64, ModelError> {
    let (loss, grads) = {
        let mut tape = model.tape();
        let loss = batch_loss(model, &mut tape, batch)?;
        (tape.scalar(loss).f64(), backward(&tape, loss)?)
    };
    let params = model.params_mut();
    params.zero_grad();
    params.accumulate(&grads, S::one());
    clip_gradients(params, config.grad_clip);
    adam_step(params, adam, config);
    Ok(loss)
}

/// Teacher-forced scores on held-out data.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Evaluation {
    /// Mean negative log-likelihood per operation.
    pub loss: f64,
    /// Share of steps where the most probable valid kind is the gold kind.
    pub op_accuracy: f64,
    /// Share of `GEN` steps where the most probable word is the gold word.
    pub word_accuracy: f64,
}

pub fn evaluate<S: Real>(model: &Model<S>, data: &[Instance]) -> Result<Evaluation, ModelError> {
    let (mut nll, mut ops, mut op_hits, mut words, mut word_hits) = (0.0, 0usize, 0usize, 0usize, 0usize);
    for inst in data {
        let mut tape = model.tape();
        let enc = model.encode(&mut tape, &inst.source)?;
        let mut state = model.initial_state(&mut tape)?;
        let max_words = inst.tree.len();
        for op in inst.ops.ops() {
            let out = model.step(&mut tape, &state, &enc)?;
            let valid = state.symbolic.valid_ops(max_words);
            let probs: Vec<f64> = tape.value(out.op_probs).iter().map(|p| p.f64()).collect();
            nll -= probs[op.kind().index()].ln();
            let best = OpKind::ALL
                .iter()
                .copied()
                .filter(|k| valid.contains(*k))
                .fold(None::<OpKind>, |acc, k| match acc {
                    Some(b) if probs[b.index()] >= probs[k.index()] => acc,
                    _ => Some(k),
                });
            ops += 1;
            op_hits += usize::from(best == Some(op.kind()));
            if let ParserOp::Gen(w) = op {
                let dist = model.word_distribution_values(&tape, &out.word, &enc);
                let gold = enc.vocab.lookup(w, model.output_vocab());
                nll -= dist[gold].ln();
                // specials are never generated
                let pick = (SPECIALS.len()..dist.len()).fold(None::<usize>, |acc, j| match acc {
                    Some(b) if dist[b] >= dist[j] => acc,
                    _ => Some(j),
                });
                words += 1;
                word_hits += usize::from(pick == Some(gold));
            }
            state = model.advance(&mut tape, &state, op)?;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(Evaluation {
        loss: if ops == 0 { 0.0 } else { nll / ops as f64 },
        op_accuracy: ratio(op_hits, ops),
        word_accuracy: ratio(word_hits, words),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: Evaluation,
}

impl fmt::Display for EpochStats {
    /// `epoch  train_loss  dev_loss  dev_op_acc  dev_word_acc`, tab-separated.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{:.6}\t{:.6}\t{:.4}\t{:.4}",
            self.epoch, self.train_loss, self.dev.loss, self.dev.op_accuracy, self.dev.word_accuracy
        )
    }
}

pub const LOG_HEADER: &str = "epoch\ttrain_loss\tdev_loss\tdev_op_acc\tdev_word_acc";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    /// Epoch whose parameters the model holds at the end (0 = initial).
    pub best_epoch: usize,
}

/// Trains `model` in place and leaves it holding the parameters with the
/// lowest dev loss. Without dev data the training instances are scored.
/// `on_epoch` sees every epoch's statistics and parameters.
pub fn train<S: Real>(
    model: &mut Model<S>,
    train_set: &[Instance],
    dev_set: &[Instance],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &Model<S>),
) -> Result<TrainReport, TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let dev = if dev_set.is_empty() { train_set } else { dev_set };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(model.params());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best = (f64::INFINITY, 0usize, model.params().clone());
    let mut history = Vec::new();
    let mut stale = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for (bi, chunk) in order.chunks(config.batch_size.max(1)).enumerate() {
            let batch: Vec<Instance> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let loss = train_step(model, &mut adam, &batch, config).map_err(|e| match e {
                ModelError::Tensor(TensorError::NonFinite { .. }) => TrainError::NonFinite {
                    epoch,
                    batch: bi,
                    source: e,
                },
                e => e.into(),
            })?;
            total += loss;
            batches += 1;
        }
        let stats = EpochStats {
            epoch,
            train_loss: total / batches as f64,
            dev: evaluate(model, dev)?,
        };
        log::info!("{stats}");
        on_epoch(&stats, model);
        history.push(stats);
        if stats.dev.loss < best.0 {
            best = (stats.dev.loss, epoch, model.params().clone());
            stale = 0;
        } else {
            stale += 1;
            if config.patience > 0 && stale >= config.patience {
                log::info!("no dev improvement for {stale} epochs, stopping");
                break;
            }
        }
    }
    if best.1 > 0 {
        model.set_params(best.2)?;
    }
    Ok(TrainReport {
        history,
        best_epoch: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Parameter, Tensor};
    use crate::corpus::{toy_corpus, Vocabulary};
    use crate::model::ModelConfig;

    fn instance(source: &str, summary: &str, heads: Vec<usize>) -> Instance {
        let ex = Example::new(source, summary, heads);
        Instance::from_example(&ex).unwrap()
    }

    fn small_model<S: Real>(hidden: usize) -> Model<S> {
        let words = ["a", "man", "escaped", "from", "prison", "said"].map(String::from);
        let v = Vocabulary::from_words(words);
        Model::new(ModelConfig::with_hidden(hidden), v.clone(), v, 3)
    }

    fn escape_sentence() -> Instance {
        instance(
            "police said a man escaped from prison",
            "a man escaped from prison",
            vec![2, 3, 0, 5, 3],
        )
    }

    #[test]
    fn zero_model_op_term_is_uniform() {
        let m = small_model::<f64>(4).zeroed();
        let mut tape = m.tape();
        let inst = escape_sentence();
        let loss = sequence_loss(&m, &mut tape, &inst, None, LossOptions::default()).unwrap();
        let expected = 10.0 * 3f64.ln();
        assert!((tape.scalar(loss.op) - expected).abs() < 1e-12);
        let total = tape.scalar(loss.total);
        assert!((total - tape.scalar(loss.op) - tape.scalar(loss.word)).abs() < 1e-12);
        assert!(tape.scalar(loss.word) > 0.0);
    }

    #[test]
    fn certain_model_has_zero_loss() {
        // copy-only switch, one source token, one legal op per step
        let mut m = small_model::<f64>(4).zeroed();
        let bias = m.params().id("switch.bias").unwrap();
        m.params_mut().get_mut(bias).value.data_mut()[0] = -800.0;
        let inst = instance("zebra", "zebra", vec![0]);
        let mut tape = m.tape();
        let opts = LossOptions { mask_ops: Some(1) };
        let loss = sequence_loss(&m, &mut tape, &inst, None, opts).unwrap();
        assert_eq!(tape.scalar(loss.total), 0.0);
    }

    #[test]
    fn batch_loss_is_mean_of_instances() {
        let m = small_model::<f64>(5);
        let batch = vec![escape_sentence(), instance("a man said", "man said", vec![2, 0])];
        let mut tape = m.tape();
        let mean = batch_loss(&m, &mut tape, &batch).unwrap();
        let mean = tape.scalar(mean);
        let single: Vec<f64> = batch
            .iter()
            .map(|i| {
                let mut tape = m.tape();
                let l = sequence_loss(&m, &mut tape, i, None, LossOptions::default()).unwrap();
                tape.scalar(l.total)
            })
            .collect();
        assert!((mean - (single[0] + single[1]) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn end_to_end_gradient() {
        // wider weights than the default init keep every derivative well
        // above the finite-difference noise floor
        let mut m = small_model::<f64>(4);
        for p in m.params_mut().iter_mut() {
            p.value.data_mut().iter_mut().for_each(|x| *x *= 8.0);
        }
        let batch = vec![escape_sentence(), instance("a zebra said", "zebra said", vec![2, 0])];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let report = grad_check(m.params(), |tape| batch_loss(&m, tape, &batch), 3, &mut rng).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    fn one_param(values: Vec<f64>, grads: Vec<f64>) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::vector(values));
        s.get_mut(id).grad = Tensor::vector(grads);
        s
    }

    fn grads(s: &ParamStore<f64>) -> Vec<f64> {
        s.iter()
            .next()
            .map(|p: &Parameter<f64>| p.grad.data().to_vec())
            .unwrap()
    }

    #[test]
    fn clipping() {
        let mut s = one_param(vec![0.0; 4], vec![7.2, -3.0, 0.0, -9.0]);
        clip_gradients(&mut s, 5.0);
        assert_eq!(grads(&s), vec![5.0, -3.0, 0.0, -5.0]);
        clip_gradients(&mut s, 5.0);
        assert_eq!(grads(&s), vec![5.0, -3.0, 0.0, -5.0]);
    }

    #[test]
    fn adam_moves_against_the_gradient() {
        let config = TrainConfig::default();
        let mut s = one_param(vec![1.0, 1.0, 1.0], vec![0.5, -2.0, 0.0]);
        let mut adam = AdamState::new(&s);
        adam_step(&mut s, &mut adam, &config);
        let v = s.iter().next().unwrap().value.data().to_vec();
        let shrink = 1.0 - 1e-3 * 1e-6;
        assert!((v[0] - (shrink - 1e-3)).abs() < 1e-9);
        assert!((v[1] - (shrink + 1e-3)).abs() < 1e-9);
        // zero gradient: weight decay only
        assert_eq!(v[2], shrink);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn toy_training_reduces_loss_deterministically() {
        let corpus = toy_corpus(50, 2);
        let data: Vec<Instance> = corpus.iter().map(|e| Instance::from_example(e).unwrap()).collect();
        let vocab_in = crate::corpus::build_vocab(&corpus, crate::corpus::VocabRole::Input { min_count: 1 }).unwrap();
        let vocab_out = crate::corpus::build_vocab(&corpus, crate::corpus::VocabRole::OUTPUT).unwrap();
        let config = TrainConfig {
            batch_size: 10,
            epochs: 5,
            patience: 0,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = Model::<f32>::new(ModelConfig::with_hidden(16), vocab_in.clone(), vocab_out.clone(), 4);
            train(&mut m, &data, &[], &config, |_, _| {}).unwrap()
        };
        let a = run();
        let losses: Vec<f64> = a.history.iter().map(|s| s.train_loss).collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
        assert_eq!(a, run());
    }

    #[test]
    fn zero_epochs_keep_the_initial_model() {
        let data = vec![escape_sentence()];
        let mut m = small_model::<f32>(4);
        let before = m.params().clone();
        let config = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let report = train(&mut m, &data, &[], &config, |_, _| panic!("no epochs")).unwrap();
        assert!(report.history.is_empty());
        assert_eq!(report.best_epoch, 0);
        assert_eq!(m.params().iter().count(), before.iter().count());
        for (a, b) in m.params().iter().zip(before.iter()) {
            assert_eq!(a.value, b.value);
        }
        assert!(matches!(
            train(&mut m, &[], &[], &config, |_, _| {}),
            Err(TrainError::EmptyCorpus)
        ));
    }

    #[test]
    fn log_line_format() {
        let s = EpochStats {
            epoch: 3,
            train_loss: 1.5,
            dev: Evaluation {
                loss: 0.25,
                op_accuracy: 0.5,
                word_accuracy: 1.0,
            },
        };
        assert_eq!(s.to_string(), "3\t1.500000\t0.250000\t0.5000\t1.0000");
        assert_eq!(LOG_HEADER.split('\t').count(), 5);
    }
}
