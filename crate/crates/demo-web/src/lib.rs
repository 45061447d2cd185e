//! Browser demo. Three operations are exported to JavaScript, each taking
//! plain strings and returning a JSON string:
//!
//! - [`trace`] runs the oracle on a sentence with head indices and reports
//!   the stack after every operation,
//! - [`random_tree`] samples a projective tree and traces it,
//! - [`score`] compares a candidate summary and parse with a reference.
//!
//! The `*_json` functions hold the logic and are what the native tests call.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use sumparse::corpus::tokenize;
use sumparse::metrics::{relation_f, relations, rouge_l, rouge_n, EmbeddingTable, Prf};
use sumparse::transition::{oracle, random_projective_heads, DependencyTree, StackState};

#[derive(Debug, Serialize)]
struct Step {
    op: String,
    /// Partial trees bottom first, `R` for the root.
    stack: Vec<String>,
    /// `head -> dependent` arcs made so far.
    arcs: Vec<String>,
}

#[derive(Debug, Serialize)]
struct Trace {
    words: Vec<String>,
    heads: Vec<usize>,
    ops: String,
    steps: Vec<Step>,
}

/// `escaped(man(a), prison(from))`: a head followed by its dependents in
/// sentence order.
fn render(node: usize, state: &StackState, words: &[String]) -> String {
    if node == 0 {
        return "R".into();
    }
    let mut deps: Vec<usize> = state.arcs().iter().filter(|a| a.0 == node).map(|a| a.1).collect();
    deps.sort_unstable();
    let word = &words[node - 1];
    if deps.is_empty() {
        return word.clone();
    }
    let inner: Vec<String> = deps.iter().map(|&d| render(d, state, words)).collect();
    format!("{word}({})", inner.join(", "))
}

fn trace_tree(tree: &DependencyTree) -> Trace {
    let ops = oracle(tree);
    let words = tree.words();
    let mut state = StackState::new();
    let mut steps = Vec::with_capacity(ops.len());
    for op in ops.ops() {
        state = state.apply_op(op).expect("oracle sequences are valid");
        steps.push(Step {
            op: op.to_string(),
            stack: state.stack().iter().map(|&n| render(n, &state, words)).collect(),
            arcs: state
                .arcs()
                .iter()
                .map(|&(h, d)| {
                    let head = if h == 0 { "R" } else { words[h - 1].as_str() };
                    format!("{head} -> {}", words[d - 1])
                })
                .collect(),
        });
    }
    Trace {
        words: words.to_vec(),
        heads: tree.heads().to_vec(),
        ops: ops.to_string(),
        steps,
    }
}

fn parse_heads(text: &str) -> Result<Vec<usize>, String> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| format!("{t:?} is not a head index")))
        .collect()
}

fn tree_from(sentence: &str, heads: &str) -> Result<DependencyTree, String> {
    DependencyTree::new(tokenize(sentence), parse_heads(heads)?).map_err(|e| e.to_string())
}

pub fn trace_json(sentence: &str, heads: &str) -> Result<String, String> {
    let tree = tree_from(sentence, heads)?;
    Ok(serde_json::to_string(&trace_tree(&tree)).expect("serializable"))
}

const WORDS: [&str; 16] = [
    "police", "said", "a", "man", "escaped", "from", "prison", "on", "monday", "the", "storm", "hit", "city", "new",
    "court", "opened",
];

pub fn random_tree_json(n: usize, seed: u64) -> Result<String, String> {
    if !(1..=20).contains(&n) {
        return Err("length must be between 1 and 20".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<String> = (0..n).map(|_| WORDS.choose(&mut rng).unwrap().to_string()).collect();
    let heads = random_projective_heads(n, &mut rng);
    let tree = DependencyTree::new(words, heads).map_err(|e| e.to_string())?;
    Ok(serde_json::to_string(&trace_tree(&tree)).expect("serializable"))
}

#[derive(Debug, Serialize)]
struct SweepRow {
    sigma: f64,
    precision: f64,
    recall: f64,
    f: f64,
}

#[derive(Debug, Serialize)]
struct Scores {
    rouge1: Prf,
    rouge2: Prf,
    rouge_l: Prf,
    relations: Vec<SweepRow>,
}

const SIGMAS: [f64; 4] = [1.0, 0.9, 0.8, 0.7];

/// `embeddings` holds optional `word v1 ... vd` lines; without them only
/// identical words match.
pub fn score_json(
    candidate: &str,
    candidate_heads: &str,
    reference: &str,
    reference_heads: &str,
    embeddings: &str,
) -> Result<String, String> {
    let cand = tree_from(candidate, candidate_heads).map_err(|e| format!("candidate: {e}"))?;
    let refr = tree_from(reference, reference_heads).map_err(|e| format!("reference: {e}"))?;
    let table = EmbeddingTable::parse(embeddings).map_err(|e| format!("embeddings: {e}"))?;
    let (p, t) = (relations(&cand), relations(&refr));
    let scores = Scores {
        rouge1: rouge_n(cand.words(), refr.words(), 1),
        rouge2: rouge_n(cand.words(), refr.words(), 2),
        rouge_l: rouge_l(cand.words(), refr.words()),
        relations: SIGMAS
            .iter()
            .map(|&sigma| {
                let r = relation_f(&p, &t, &table, sigma);
                SweepRow {
                    sigma,
                    precision: r.precision,
                    recall: r.recall,
                    f: r.f,
                }
            })
            .collect(),
    };
    Ok(serde_json::to_string(&scores).expect("serializable"))
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

/// Oracle trace of `sentence` parsed by `heads` (1-based, `0` = root).
#[wasm_bindgen]
pub fn trace(sentence: &str, heads: &str) -> Result<String, JsError> {
    js(trace_json(sentence, heads))
}

#[wasm_bindgen]
pub fn random_tree(n: u32, seed: u32) -> Result<String, JsError> {
    js(random_tree_json(n as usize, seed as u64))
}

#[wasm_bindgen]
pub fn score(
    candidate: &str,
    candidate_heads: &str,
    reference: &str,
    reference_heads: &str,
    embeddings: &str,
) -> Result<String, JsError> {
    js(score_json(
        candidate,
        candidate_heads,
        reference,
        reference_heads,
        embeddings,
    ))
}
