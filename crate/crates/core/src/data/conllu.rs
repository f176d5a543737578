use std::fmt::Write;

use super::{AnnotatedGraphSample, Edge};
use crate::error::{Error, Result};

const COLUMNS: usize = 10;

/// Reads CoNLL-U. Only ID, FORM, XPOS, HEAD and DEPREL are consumed;
/// multi-word token ranges and empty nodes are skipped.
pub fn parse_conllu(text: &str) -> Result<Vec<AnnotatedGraphSample>> {
    let mut out = Vec::new();
    let mut current = Builder::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if let Some(s) = current.finish()? {
                out.push(s);
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != COLUMNS {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {COLUMNS} tab-separated columns, found {}", cols.len()),
            });
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let id: usize = id.parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("bad token id {id:?}"),
        })?;
        if id != current.words.len() + 1 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("token id {id} out of sequence"),
            });
        }
        let head: usize = cols[6].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("bad head {:?}", cols[6]),
        })?;
        if cols[1].is_empty() || cols[4].is_empty() || cols[7].is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty FORM, XPOS or DEPREL column".into(),
            });
        }
        current.words.push(cols[1].to_string());
        current.tags.push(cols[4].to_string());
        current.edges.push((head, id, cols[7].to_string(), line_no));
    }
    if let Some(s) = current.finish()? {
        out.push(s);
    }
    Ok(out)
}

#[derive(Default)]
struct Builder {
    words: Vec<String>,
    tags: Vec<String>,
    edges: Vec<(usize, usize, String, usize)>,
}

impl Builder {
    fn finish(&mut self) -> Result<Option<AnnotatedGraphSample>> {
        let taken = std::mem::take(self);
        if taken.words.is_empty() {
            return Ok(None);
        }
        let n = taken.words.len();
        let mut edges = Vec::with_capacity(n);
        for (head, dep, label, line) in taken.edges {
            if head > n {
                return Err(Error::Validation(format!(
                    "line {line}: head {head} beyond sentence length {n}"
                )));
            }
            if head == dep {
                return Err(Error::Validation(format!("line {line}: word {dep} heads itself")));
            }
            edges.push(Edge { head, dep, label });
        }
        Ok(Some(AnnotatedGraphSample {
            words: taken.words,
            tags: taken.tags,
            edges,
        }))
    }
}

/// Writes one block per sample using each word's primary head and label.
/// Tags go to both UPOS and XPOS.
pub fn write_conllu(samples: &[AnnotatedGraphSample]) -> String {
    let mut out = String::new();
    for s in samples {
        let heads = s.heads();
        let rels = s.relations();
        for i in 0..s.len() {
            writeln!(
                out,
                "{}\t{}\t_\t{}\t{}\t_\t{}\t{}\t_\t_",
                i + 1,
                s.words[i],
                s.tags[i],
                s.tags[i],
                heads[i],
                rels[i]
            )
            .expect("writing to a String");
        }
        out.push('\n');
    }
    out
}
