//! BEIR-style corpus, query and relevance-judgment loading.
//!
//! Corpora and queries are JSONL (one object per line, fields `_id`, `title`,
//! `text`), qrels are a three-column TSV with an optional header row. All
//! loaders preserve file order so downstream runs are deterministic.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("negative relevance grade on line {line}: {grade}")]
    NegativeGrade { line: usize, grade: i64 },
    #[error("query `{0}` is judged but missing from the query set")]
    UnknownQuery(String),
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "_id")]
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

impl Document {
    /// Text fed to the embedder: `title + " " + text`, title skipped when empty.
    pub fn embedding_text(&self) -> String {
        if self.title.trim().is_empty() {
            self.text.clone()
        } else {
            format!("{} {}", self.title, self.text)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    #[serde(rename = "_id")]
    pub query_id: String,
    pub text: String,
}

/// Graded relevance judgments keyed by query then document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QrelSet {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl QrelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a judgment, returning the previous grade if one existed.
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) -> Option<u32> {
        self.judgments
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade)
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.judgments.get(query_id)?.get(doc_id).copied()
    }

    pub fn judged(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn has_positive(&self, query_id: &str) -> bool {
        self.judged(query_id)
            .is_some_and(|docs| docs.values().any(|&g| g > 0))
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    /// Number of (query, document) judgments.
    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.judgments.iter().flat_map(|(q, docs)| {
            docs.iter()
                .map(move |(d, &g)| (q.as_str(), d.as_str(), g))
        })
    }
}

fn read_jsonl<T, F>(path: &Path, mut id_of: F) -> Result<Vec<T>, CorpusError>
where
    T: for<'de> Deserialize<'de>,
    F: FnMut(&T, usize) -> Result<String, CorpusError>,
{
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let id = id_of(&record, line_no)?;
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId(id));
        }
        out.push(record);
    }
    Ok(out)
}

fn require_non_empty(value: &str, field: &str, line: usize) -> Result<(), CorpusError> {
    if value.trim().is_empty() {
        return Err(CorpusError::Parse {
            line,
            message: format!("field `{field}` is empty"),
        });
    }
    Ok(())
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>, CorpusError> {
    read_jsonl(path.as_ref(), |doc: &Document, line| {
        require_non_empty(&doc.doc_id, "_id", line)?;
        require_non_empty(&doc.text, "text", line)?;
        Ok(doc.doc_id.clone())
    })
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>, CorpusError> {
    read_jsonl(path.as_ref(), |q: &Query, line| {
        require_non_empty(&q.query_id, "_id", line)?;
        require_non_empty(&q.text, "text", line)?;
        Ok(q.query_id.clone())
    })
}

/// Loads a `query-id<TAB>corpus-id<TAB>score` file. A first row whose score
/// column is not an integer is treated as a header. Later duplicates win.
pub fn load_qrels(path: impl AsRef<Path>) -> Result<QrelSet, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut qrels = QrelSet::new();
    let mut first_row = true;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = if line.contains('\t') {
            line.split('\t').map(str::trim).collect()
        } else {
            line.split_whitespace().collect()
        };
        let is_first = std::mem::replace(&mut first_row, false);
        if cols.len() != 3 {
            return Err(CorpusError::Parse {
                line: line_no,
                message: format!("expected 3 columns, found {}", cols.len()),
            });
        }
        let grade: i64 = match cols[2].parse() {
            Ok(g) => g,
            Err(_) if is_first => continue,
            Err(_) => {
                return Err(CorpusError::Parse {
                    line: line_no,
                    message: format!("score `{}` is not an integer", cols[2]),
                })
            }
        };
        if grade < 0 {
            return Err(CorpusError::NegativeGrade {
                line: line_no,
                grade,
            });
        }
        let grade = u32::try_from(grade).map_err(|_| CorpusError::Parse {
            line: line_no,
            message: format!("score {grade} out of range"),
        })?;
        if let Some(prev) = qrels.insert(cols[0], cols[1], grade) {
            tracing::warn!(
                line = line_no,
                query = cols[0],
                doc = cols[1],
                previous = prev,
                grade,
                "duplicate qrel row; later row wins"
            );
        }
    }
    Ok(qrels)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| CorpusError::io(path, e))?;
    }
    w.flush().map_err(|e| CorpusError::io(path, e))
}

pub fn write_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<(), CorpusError> {
    write_jsonl(path.as_ref(), docs)
}

pub fn write_queries(path: impl AsRef<Path>, queries: &[Query]) -> Result<(), CorpusError> {
    write_jsonl(path.as_ref(), queries)
}

pub fn write_qrels(path: impl AsRef<Path>, qrels: &QrelSet) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| CorpusError::io(path, e);
    writeln!(w, "query-id\tcorpus-id\tscore").map_err(io)?;
    for (q, d, g) in qrels.iter() {
        writeln!(w, "{q}\t{d}\t{g}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// A validated corpus/queries/qrels triple.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub docs: Vec<Document>,
    pub queries: Vec<Query>,
    pub qrels: QrelSet,
}

impl Dataset {
    /// Checks that every judged query exists. Documents referenced by qrels
    /// but absent from the corpus are allowed (they simply cannot be retrieved).
    pub fn new(docs: Vec<Document>, queries: Vec<Query>, qrels: QrelSet) -> Result<Self, CorpusError> {
        let known: HashSet<&str> = queries.iter().map(|q| q.query_id.as_str()).collect();
        if let Some(missing) = qrels.query_ids().find(|q| !known.contains(q)) {
            return Err(CorpusError::UnknownQuery(missing.to_string()));
        }
        Ok(Self { docs, queries, qrels })
    }

    pub fn load(
        corpus: impl AsRef<Path>,
        queries: impl AsRef<Path>,
        qrels: impl AsRef<Path>,
    ) -> Result<Self, CorpusError> {
        Self::new(load_corpus(corpus)?, load_queries(queries)?, load_qrels(qrels)?)
    }

    /// Queries with at least one positive judgment, in file order. Queries
    /// without one are dropped and counted in a log line.
    pub fn evaluable_queries(&self) -> Vec<&Query> {
        let kept: Vec<&Query> = self
            .queries
            .iter()
            .filter(|q| self.qrels.has_positive(&q.query_id))
            .collect();
        let dropped = self.queries.len() - kept.len();
        if dropped > 0 {
            tracing::info!(dropped, "queries without positive judgments excluded from evaluation");
        }
        kept
    }

    pub fn query(&self, query_id: &str) -> Option<&Query> {
        self.queries.iter().find(|q| q.query_id == query_id)
    }

    /// Writes the normalized bundle (`corpus.jsonl`, `queries.jsonl`, `qrels.tsv`).
    pub fn write_bundle(&self, dir: impl AsRef<Path>) -> Result<(), CorpusError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
        write_corpus(dir.join("corpus.jsonl"), &self.docs)?;
        write_queries(dir.join("queries.jsonl"), &self.queries)?;
        write_qrels(dir.join("qrels.tsv"), &self.qrels)
    }
}
