//! Reader for tab-separated CoNLL-style dependency files.
//!
//! Sentences are separated by blank lines and `#` lines are comments. Rows
//! with at least seven columns are read as CoNLL-X / CoNLL-U (FORM in
//! column 2, HEAD in column 7); two-column rows are `token<TAB>head`.
//! Multi-word token ranges (`3-4`) and empty nodes (`5.1`) are skipped.

use super::{tokenize, CorpusError, Example};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedSentence {
    pub words: Vec<String>,
    pub heads: Vec<usize>,
}

pub fn parse_conll(text: &str) -> Result<Vec<ParsedSentence>, CorpusError> {
    let mut out = Vec::new();
    let mut cur = ParsedSentence {
        words: Vec::new(),
        heads: Vec::new(),
    };
    for (i, line) in text.lines().enumerate() {
        let bad = |message: String| CorpusError::Record { line: i + 1, message };
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !cur.words.is_empty() {
                out.push(std::mem::replace(
                    &mut cur,
                    ParsedSentence {
                        words: Vec::new(),
                        heads: Vec::new(),
                    },
                ));
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let (form, head) = match cols.len() {
            2 => (cols[0], cols[1]),
            n if n >= 7 => {
                if cols[0].contains('-') || cols[0].contains('.') {
                    continue;
                }
                (cols[1], cols[6])
            }
            n => {
                return Err(bad(format!(
                    "expected 2 or at least 7 tab-separated columns, found {n}"
                )))
            }
        };
        let head: usize = head
            .trim()
            .parse()
            .map_err(|_| bad(format!("head {head:?} is not a non-negative integer")))?;
        cur.words.push(form.to_lowercase());
        cur.heads.push(head);
    }
    if !cur.words.is_empty() {
        out.push(cur);
    }
    Ok(out)
}

/// Pairs parsed summaries with source lines. With `source_parses` the source
/// tokens and heads come from the parse and `sources` is ignored.
pub fn to_examples(
    summaries: &[ParsedSentence],
    sources: Option<&[String]>,
    source_parses: Option<&[ParsedSentence]>,
) -> Result<Vec<Example>, CorpusError> {
    let n = summaries.len();
    let available = source_parses.map(<[_]>::len).or(sources.map(<[_]>::len)).unwrap_or(0);
    if available != n {
        return Err(CorpusError::Record {
            line: 0,
            message: format!("{n} summaries but {available} sources"),
        });
    }
    Ok(summaries
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (source, source_heads) = match source_parses {
                Some(p) => (p[i].words.clone(), Some(p[i].heads.clone())),
                None => (tokenize(&sources.unwrap()[i]), None),
            };
            Example {
                source,
                summary: s.words.clone(),
                heads: s.heads.clone(),
                source_heads,
            }
        })
        .collect())
}
