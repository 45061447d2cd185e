//! The `sumparse` command line.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

pub use config::{Overrides, RunConfig};

use crate::corpus::conll::{parse_conll, to_examples};
use crate::corpus::{build_vocab, corpus_to_string, filter, linearize, load_corpus, tokenize, CorpusError, Example};
use crate::decoding::{decode_all, DecodeRecord};
use crate::metrics::{
    load_embeddings, relation_matches, relations, rouge_l, rouge_n, EmbeddingError, EmbeddingTable, Prf,
};
use crate::model::{Model, ModelError};
use crate::training::{train, Instance, TrainError, LOG_HEADER};
use crate::transition::{execute, TransitionError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("missing required setting `{0}`")]
    Missing(&'static str),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Corpus {
        path: PathBuf,
        #[source]
        source: CorpusError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error("{path}: {source}")]
    Embedding {
        path: PathBuf,
        #[source]
        source: EmbeddingError,
    },
    #[error("{0}")]
    Data(String),
}

impl CliError {
    fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sumparse", version, about = "Joint summarization and dependency parsing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the oracle operation sequence of every usable example in
    /// `--input` and check that each one rebuilds its tree
    Oracle(RunArgs),
    /// Fit a model on `--train-file`; checkpoints and the log go to the
    /// `--output` directory
    Train(RunArgs),
    /// Beam-search summaries for the `source` field of each `--input` line
    Decode(RunArgs),
    /// Score decoder output (`--input`) against `--reference`
    Eval(RunArgs),
    /// Turn CoNLL parses (`--input`) plus `--sources` or `--source-parses`
    /// into the native corpus format
    Convert(RunArgs),
}

#[derive(Args, Clone, Debug)]
pub struct RunArgs {
    /// `key = value` settings file, applied before the flags
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        c.apply_overrides(&self.overrides)?;
        c.validate()?;
        Ok(c)
    }
}

/// Parses `argv` and runs it; returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute_command(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("sumparse: {e}");
            1
        }
    }
}

pub fn execute_command(command: &Command) -> Result<(), CliError> {
    let (name, args) = match command {
        Command::Oracle(a) => ("oracle", a),
        Command::Train(a) => ("train", a),
        Command::Decode(a) => ("decode", a),
        Command::Eval(a) => ("eval", a),
        Command::Convert(a) => ("convert", a),
    };
    let config = args.resolve()?;
    let flat: Vec<String> = config.entries().iter().map(|(k, v)| format!("{k}={v}")).collect();
    log::info!("{name}: {}", flat.join(" "));
    let mut out = Outputs::default();
    match command {
        Command::Oracle(_) => oracle_cmd(&config, &mut out)?,
        Command::Train(_) => train_cmd(&config, &mut out)?,
        Command::Decode(_) => decode_cmd(&config, &mut out)?,
        Command::Eval(_) => eval_cmd(&config, &mut out)?,
        Command::Convert(_) => convert_cmd(&config, &mut out)?,
    }
    out.keep();
    Ok(())
}

/// Files written by a run. Unless [`Outputs::keep`] is called they are
/// deleted on drop, so a failed run leaves nothing half-written behind.
#[derive(Default)]
struct Outputs {
    written: Vec<PathBuf>,
    kept: bool,
}

impl Outputs {
    /// Writes through a temporary file so readers never see a torn file.
    fn write(&mut self, path: &Path, contents: &[u8]) -> Result<(), CliError> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".partial");
        let tmp = PathBuf::from(tmp);
        let res = fs::write(&tmp, contents).and_then(|_| fs::rename(&tmp, path));
        if let Err(e) = res {
            let _ = fs::remove_file(&tmp);
            return Err(CliError::io(path, e));
        }
        if !self.written.iter().any(|p| p == path) {
            self.written.push(path.to_path_buf());
        }
        Ok(())
    }

    fn keep(&mut self) {
        self.kept = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.kept {
            for p in &self.written {
                let _ = fs::remove_file(p);
            }
        }
    }
}

fn required<'a>(value: &'a Option<PathBuf>, key: &'static str) -> Result<&'a Path, CliError> {
    value.as_deref().ok_or(CliError::Missing(key))
}

fn echo_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".config");
    PathBuf::from(s)
}

fn read_corpus(path: &Path) -> Result<Vec<Example>, CliError> {
    load_corpus(path).map_err(|source| match source {
        CorpusError::Io { path, source } => CliError::Io { path, source },
        source => CliError::Corpus {
            path: path.to_path_buf(),
            source,
        },
    })
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn oracle_cmd(c: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let input = required(&c.input, "input")?;
    let (kept, stats) = filter(read_corpus(input)?, &c.filter_config());
    eprintln!("{stats}");
    let mut text = String::new();
    for (i, ex) in kept.iter().enumerate() {
        let ops = linearize(ex)?;
        if execute(&ops)? != ex.tree()? {
            return Err(CliError::Data(format!(
                "example {}: oracle does not rebuild its tree",
                i + 1
            )));
        }
        writeln!(text, "{ops}").unwrap();
    }
    match &c.output {
        Some(path) => {
            out.write(path, text.as_bytes())?;
            out.write(&echo_path(path), c.render().as_bytes())?;
        }
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::io(Path::new("<stdout>"), e))?,
    }
    Ok(())
}

fn instances(examples: &[Example]) -> Result<Vec<Instance>, CliError> {
    Ok(examples.iter().map(Instance::from_example).collect::<Result<_, _>>()?)
}

fn train_cmd(c: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let train_path = required(&c.train_file, "train_file")?;
    let dir = required(&c.output, "output")?;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    out.write(&dir.join("config.txt"), c.render().as_bytes())?;

    let (train_ex, stats) = filter(read_corpus(train_path)?, &c.filter_config());
    log::info!("training data: {stats}");
    let input_vocab = build_vocab(&train_ex, c.input_role()).map_err(|source| CliError::Corpus {
        path: train_path.to_path_buf(),
        source,
    })?;
    let output_vocab = build_vocab(&train_ex, c.output_role()).expect("non-empty corpus");
    let train_set = instances(&train_ex)?;
    let dev_set = match &c.dev_file {
        Some(p) => {
            let (dev_ex, stats) = filter(read_corpus(p)?, &c.filter_config());
            log::info!("dev data: {stats}");
            instances(&dev_ex)?
        }
        None => Vec::new(),
    };

    let mut model: Model<f32> = Model::new(c.model_config(), input_vocab, output_vocab, c.seed);
    let log_path = dir.join("train.log");
    let last_path = dir.join("last.ckpt");
    let mut log_text = format!("{LOG_HEADER}\n");
    out.write(&log_path, log_text.as_bytes())?;
    let mut failure = None;
    let report = train(&mut model, &train_set, &dev_set, &c.train_config(), |stats, m| {
        if failure.is_some() {
            return;
        }
        writeln!(log_text, "{stats}").unwrap();
        let res = out
            .write(&log_path, log_text.as_bytes())
            .and_then(|_| out.write(&last_path, &m.to_bytes()));
        if let Err(e) = res {
            failure = Some(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    out.write(&dir.join("model.ckpt"), &model.to_bytes())?;
    log::info!("kept parameters of epoch {}", report.best_epoch);
    Ok(())
}

#[derive(Deserialize)]
struct SourceLine {
    source: String,
}

fn decode_cmd(c: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let model_path = required(&c.model, "model")?;
    let input = required(&c.input, "input")?;
    let output = required(&c.output, "output")?;
    let model: Model<f32> = Model::load(model_path)?;
    let limit = model.config().max_source_len;

    let mut sources = Vec::new();
    let mut truncated = 0;
    for (i, line) in read_text(input)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| CliError::Data(format!("{}: line {}: {m}", input.display(), i + 1));
        let rec: SourceLine = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let mut tokens = tokenize(&rec.source);
        if tokens.is_empty() {
            return Err(bad("empty source".into()));
        }
        if tokens.len() > limit {
            tokens.truncate(limit);
            truncated += 1;
        }
        sources.push(tokens);
    }
    if truncated > 0 {
        log::warn!("{truncated} sources cut to {limit} tokens");
    }

    let records = decode_all(&model, &sources, &c.beam_config(), c.workers)?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r).expect("records serialize"));
        text.push('\n');
    }
    out.write(output, text.as_bytes())?;
    out.write(&echo_path(output), c.render().as_bytes())?;
    log::info!("decoded {} inputs", records.len());
    Ok(())
}

/// Scores of one prediction.
struct Scored {
    rouge: [f64; 3],
    predicted: usize,
    target: usize,
    /// Matches at each configured σ.
    matches: Vec<usize>,
    strict: usize,
}

fn score_one(
    rec: &DecodeRecord,
    ex: &Example,
    against_source: bool,
    table: &EmbeddingTable,
    sigmas: &[f64],
) -> Result<Scored, CliError> {
    let cand: Vec<&str> = rec.summary.split_whitespace().collect();
    let reference: Vec<&str> = ex.summary.iter().map(String::as_str).collect();
    let predicted = relations(&rec.tree()?);
    let target = if against_source {
        let tree = ex
            .source_tree()
            .ok_or_else(|| CliError::Data("reference lacks source_heads".into()))??;
        relations(&tree)
    } else {
        relations(&ex.tree()?)
    };
    Ok(Scored {
        rouge: [
            rouge_n(&cand, &reference, 1).f,
            rouge_n(&cand, &reference, 2).f,
            rouge_l(&cand, &reference).f,
        ],
        predicted: predicted.len(),
        target: target.len(),
        matches: sigmas
            .iter()
            .map(|&s| relation_matches(&predicted, &target, table, s))
            .collect(),
        strict: relation_matches(&predicted, &target, table, 1.0),
    })
}

fn eval_cmd(c: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let input = required(&c.input, "input")?;
    let reference = required(&c.reference, "reference")?;
    let output = required(&c.output, "output")?;

    let mut records = Vec::new();
    for (i, line) in read_text(input)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: DecodeRecord = serde_json::from_str(line)
            .map_err(|e| CliError::Data(format!("{}: line {}: {e}", input.display(), i + 1)))?;
        records.push(r);
    }
    let refs = read_corpus(reference)?;
    if records.len() != refs.len() {
        return Err(CliError::Data(format!(
            "{} predictions but {} references",
            records.len(),
            refs.len()
        )));
    }
    let table = match &c.embeddings {
        Some(p) => load_embeddings(p).map_err(|source| CliError::Embedding {
            path: p.clone(),
            source,
        })?,
        None => EmbeddingTable::default(),
    };
    let against_source = c.against == "source";

    let one = |(r, ex): (&DecodeRecord, &Example)| score_one(r, ex, against_source, &table, &c.sigmas);
    let scored: Vec<Scored> = if c.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(c.workers)
            .build()
            .map_err(|e| CliError::Config(e.to_string()))?;
        pool.install(|| {
            records
                .par_iter()
                .zip(refs.par_iter())
                .map(one)
                .collect::<Result<_, _>>()
        })?
    } else {
        records.iter().zip(&refs).map(one).collect::<Result<_, _>>()?
    };

    let mut text = String::from("id\trouge1_f\trouge2_f\trougeL_f\trel_p\trel_r\trel_f");
    for s in &c.sigmas {
        write!(text, "\trel_f@{s}").unwrap();
    }
    text.push('\n');
    let mut sums = vec![0.0; 6 + c.sigmas.len()];
    for (i, s) in scored.iter().enumerate() {
        let strict = Prf::from_counts(s.strict, s.predicted, s.target);
        let mut row = vec![
            s.rouge[0],
            s.rouge[1],
            s.rouge[2],
            strict.precision,
            strict.recall,
            strict.f,
        ];
        row.extend(s.matches.iter().map(|&m| Prf::from_counts(m, s.predicted, s.target).f));
        for (acc, v) in sums.iter_mut().zip(&row) {
            *acc += v;
        }
        write_row(&mut text, &(i + 1).to_string(), &row);
    }
    let n = scored.len().max(1) as f64;
    let macro_row: Vec<f64> = sums.iter().map(|v| v / n).collect();
    write_row(&mut text, "macro", &macro_row);

    // corpus-wide counts; ROUGE is only reported per instance
    let predicted: usize = scored.iter().map(|s| s.predicted).sum();
    let target: usize = scored.iter().map(|s| s.target).sum();
    let pooled = |matched: usize| Prf::from_counts(matched, predicted, target);
    let strict = pooled(scored.iter().map(|s| s.strict).sum());
    text.push_str("pooled\t-\t-\t-");
    let mut pooled_row = vec![strict.precision, strict.recall, strict.f];
    pooled_row.extend((0..c.sigmas.len()).map(|k| pooled(scored.iter().map(|s| s.matches[k]).sum()).f));
    write_row(&mut text, "", &pooled_row);
    out.write(output, text.as_bytes())?;
    out.write(&echo_path(output), c.render().as_bytes())?;

    // the sweep averages per-instance scores, like the macro row
    let mut sweep = String::from("sigma\tP\tR\tF\n");
    for (k, sigma) in c.sigmas.iter().enumerate() {
        let mut acc = [0.0; 3];
        for s in &scored {
            let p = Prf::from_counts(s.matches[k], s.predicted, s.target);
            acc[0] += p.precision;
            acc[1] += p.recall;
            acc[2] += p.f;
        }
        writeln!(
            sweep,
            "{sigma}\t{:.4}\t{:.4}\t{:.4}",
            acc[0] / n,
            acc[1] / n,
            acc[2] / n
        )
        .unwrap();
    }
    match &c.sweep_output {
        Some(p) => out.write(p, sweep.as_bytes())?,
        None => eprint!("{sweep}"),
    }
    println!(
        "rouge1 {:.4}  rouge2 {:.4}  rougeL {:.4}  relation F {:.4}",
        macro_row[0], macro_row[1], macro_row[2], macro_row[5]
    );
    Ok(())
}

fn write_row(text: &mut String, id: &str, values: &[f64]) {
    text.push_str(id);
    for v in values {
        write!(text, "\t{v:.4}").unwrap();
    }
    text.push('\n');
}

fn convert_cmd(c: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let input = required(&c.input, "input")?;
    let output = required(&c.output, "output")?;
    let conll = |p: &Path| {
        parse_conll(&read_text(p)?).map_err(|source| CliError::Corpus {
            path: p.to_path_buf(),
            source,
        })
    };
    let summaries = conll(input)?;
    let source_parses = c.source_parses.as_deref().map(conll).transpose()?;
    let sources: Option<Vec<String>> = match (&source_parses, &c.sources) {
        (None, Some(p)) => Some(
            read_text(p)?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(str::to_string)
                .collect(),
        ),
        (None, None) => return Err(CliError::Missing("sources")),
        _ => None,
    };
    let examples =
        to_examples(&summaries, sources.as_deref(), source_parses.as_deref()).map_err(|source| CliError::Corpus {
            path: input.to_path_buf(),
            source,
        })?;
    out.write(output, corpus_to_string(&examples).as_bytes())?;
    out.write(&echo_path(output), c.render().as_bytes())?;
    log::info!("converted {} sentences", examples.len());
    Ok(())
}
