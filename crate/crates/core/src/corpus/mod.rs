//! Documents, JSON-lines ingestion, segmentation, tokenization, diverse
//! subsampling and leakage-free splitting.

mod sample;
mod segment;
mod synthetic;
mod tokenize;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use sample::{kmeans_assign, kmeans_sample, split, tfidf_matrix, TfidfMatrix, KMEANS_MAX_ITERS, KMEANS_TOL};
pub use segment::{segment_sentences, ABBREVIATIONS};
pub use synthetic::{synthetic_corpus, SyntheticSpec, MARKER_WORDS};
pub use tokenize::{fnv1a64, token_id, tokenize, word_pieces, TokenSeq, CLS_ID, EOS_ID, MAX_LEN, PAD_ID, RESERVED_IDS, UNK_ID};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: duplicate document id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("corpus is empty")]
    Empty,
    #[error("insufficient documents: required {required}, available {available}")]
    Insufficient { required: usize, available: usize },
    #[error("document {id}: {msg}")]
    InvalidDocument { id: String, msg: String },
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub text: String,
    pub tokens: TokenSeq,
}

impl Sentence {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into(), tokens: TokenSeq::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<Sentence>,
    pub reference: Vec<Sentence>,
    pub labels: Option<Vec<u8>>,
}

impl Document {
    pub fn new(id: impl Into<String>, sentences: &[&str], reference: &[&str]) -> Self {
        Self {
            id: id.into(),
            sentences: sentences.iter().map(|s| Sentence::new(*s)).collect(),
            reference: reference.iter().map(|s| Sentence::new(*s)).collect(),
            labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Tokenize source and reference sentences in place.
    pub fn tokenize(&mut self, vocab_size: usize, max_len: usize) {
        for s in self.sentences.iter_mut().chain(self.reference.iter_mut()) {
            s.tokens = tokenize(&s.text, vocab_size, max_len);
        }
    }

    pub fn is_tokenized(&self) -> bool {
        self.sentences.iter().all(|s| !s.tokens.ids.is_empty())
    }

    pub fn reference_text(&self) -> String {
        join_sentences(self.reference.iter().map(|s| s.text.as_str()))
    }

    pub fn set_labels(&mut self, labels: Vec<u8>) -> Result<(), CorpusError> {
        if labels.len() != self.sentences.len() || labels.iter().any(|&l| l > 1) {
            return Err(CorpusError::InvalidDocument {
                id: self.id.clone(),
                msg: format!("labels must be {} binary values", self.sentences.len()),
            });
        }
        self.labels = Some(labels);
        Ok(())
    }
}

pub fn join_sentences<'a>(parts: impl IntoIterator<Item = &'a str>) -> String {
    parts.into_iter().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    #[default]
    Unsplit,
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn name(self) -> &'static str {
        match self {
            SplitTag::Unsplit => "unsplit",
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub split_tag: SplitTag,
}

impl Corpus {
    /// Fails on duplicate ids.
    pub fn new(documents: Vec<Document>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for (i, d) in documents.iter().enumerate() {
            if !seen.insert(d.id.as_str()) {
                return Err(CorpusError::DuplicateId { line: i + 1, id: d.id.clone() });
            }
        }
        Ok(Self { documents, split_tag: SplitTag::Unsplit })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.documents.iter().map(|d| d.id.as_str()).collect()
    }

    pub fn tokenize(&mut self, vocab_size: usize, max_len: usize) {
        for d in &mut self.documents {
            d.tokenize(vocab_size, max_len);
        }
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sentences: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    reference: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<u8>>,
}

fn clean(parts: Vec<String>) -> Vec<Sentence> {
    parts
        .into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .map(Sentence::new)
        .collect()
}

fn parse_record(line_no: usize, line: &str) -> Result<Document, CorpusError> {
    let malformed = |msg: String| CorpusError::Malformed { line: line_no, msg };
    let rec: Record = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    let sentences = match (rec.sentences, rec.text) {
        (Some(s), _) => clean(s),
        (None, Some(text)) if !text.trim().is_empty() => segment_sentences(&text),
        _ => return Err(malformed("missing field `sentences` or `text`".into())),
    };
    if sentences.is_empty() {
        return Err(malformed("document has no non-empty sentences".into()));
    }
    let mut doc = Document { id: rec.id, sentences, reference: clean(rec.reference), labels: None };
    if let Some(labels) = rec.labels {
        doc.set_labels(labels).map_err(|e| malformed(e.to_string()))?;
    }
    Ok(doc)
}

/// Read a JSON-lines corpus. Blank lines are skipped; line numbers are 1-based.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut documents = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = parse_record(i + 1, &line)?;
        if !seen.insert(doc.id.clone()) {
            return Err(CorpusError::DuplicateId { line: i + 1, id: doc.id });
        }
        documents.push(doc);
    }
    Ok(Corpus { documents, split_tag: SplitTag::Unsplit })
}

/// Write a corpus in the input format, including labels when present.
pub fn write_jsonl(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for d in &corpus.documents {
        let rec = Record {
            id: d.id.clone(),
            sentences: Some(d.sentences.iter().map(|s| s.text.clone()).collect()),
            text: None,
            reference: d.reference.iter().map(|s| s.text.clone()).collect(),
            labels: d.labels.clone(),
        };
        let line = serde_json::to_string(&rec).expect("record serializes");
        writeln!(out, "{line}").map_err(|e| CorpusError::io(path, e))?;
    }
    out.flush().map_err(|e| CorpusError::io(path, e))
}

/// Write `<dir>/<split>_ids.txt`, one id per line.
pub fn write_manifest(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<PathBuf, CorpusError> {
    let path = dir.as_ref().join(format!("{}_ids.txt", corpus.split_tag.name()));
    let mut body = corpus.ids().join("\n");
    body.push('\n');
    std::fs::write(&path, body).map_err(|e| CorpusError::io(&path, e))?;
    Ok(path)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<String>, CorpusError> {
    let path = path.as_ref();
    let body = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    Ok(body.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

/// Subset of `corpus` whose ids appear in `ids`, in manifest order.
pub fn select_ids(corpus: &Corpus, ids: &[String], tag: SplitTag) -> Result<Corpus, CorpusError> {
    let documents = ids
        .iter()
        .map(|id| {
            corpus.get(id).cloned().ok_or_else(|| CorpusError::InvalidDocument {
                id: id.clone(),
                msg: "listed in manifest but not in corpus".into(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Corpus { documents, split_tag: tag })
}
