//! Pretrained word vectors, tokenization, and sentence matrices.
//!
//! The vector file is the plain text format shared by GloVe and converted
//! word2vec models: one `token v1 v2 ... vd` entry per line, optionally
//! preceded by a `count dim` header line.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Token cap applied when no other length is configured.
pub const DEFAULT_MAX_LEN: usize = 40;

/// Vocabulary plus a `|vocab| × dim` matrix of vectors. Immutable after load.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vocab: HashMap<String, usize>,
    vectors: Matrix,
}

impl EmbeddingTable {
    /// Builds a table from in-memory `(token, vector)` pairs. The first
    /// occurrence of a duplicated token wins.
    pub fn from_pairs<S, V>(pairs: impl IntoIterator<Item = (S, V)>) -> Result<Self>
    where
        S: Into<String>,
        V: AsRef<[f64]>,
    {
        let mut dim = None;
        let mut vocab = HashMap::new();
        let mut data = Vec::new();
        for (token, vector) in pairs {
            let vector = vector.as_ref();
            let d = *dim.get_or_insert(vector.len());
            if vector.len() != d || d == 0 {
                return Err(Error::InvalidArgument(format!(
                    "vector of length {} in a table of dimension {d}",
                    vector.len()
                )));
            }
            let token = token.into();
            if !vocab.contains_key(&token) {
                vocab.insert(token, vocab.len());
                data.extend_from_slice(vector);
            }
        }
        let dim = dim.ok_or_else(|| Error::Empty("no embedding vectors".into()))?;
        let vectors = Matrix::from_vec(vocab.len(), dim, data)?;
        Ok(EmbeddingTable {
            dim,
            vocab,
            vectors,
        })
    }

    /// Loads every entry of a vector file.
    pub fn load(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<Self> {
        load_embeddings(path, expected_dim, None)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vocab.contains_key(token)
    }

    pub fn lookup(&self, token: &str) -> Option<&[f64]> {
        self.vocab.get(token).map(|&i| self.vectors.row(i))
    }
}

/// Loads a vector file. When `keep` is given only those tokens are retained,
/// which keeps multi-gigabyte vocabularies out of memory; dimensions are
/// still validated on every line.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    expected_dim: Option<usize>,
    keep: Option<&HashSet<String>>,
) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file), path, expected_dim, keep)
}

pub(crate) fn read_embeddings<R: Read>(
    reader: BufReader<R>,
    path: &Path,
    expected_dim: Option<usize>,
    keep: Option<&HashSet<String>>,
) -> Result<EmbeddingTable> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        message,
    };

    let mut dim = expected_dim;
    let mut vocab = HashMap::new();
    let mut data = Vec::new();
    let mut saw_entry = false;
    let mut first_content = true;

    for (idx, line) in reader.split(b'\n').enumerate() {
        let lineno = idx + 1;
        let bytes = line.map_err(|e| Error::io(path, e))?;
        let line = String::from_utf8_lossy(&bytes);
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();

        if std::mem::take(&mut first_content) {
            if let Some(header_dim) = parse_header(token, &rest) {
                match dim {
                    Some(d) if d != header_dim => {
                        return Err(parse_err(
                            lineno,
                            format!("header declares dimension {header_dim}, expected {d}"),
                        ))
                    }
                    _ => dim = Some(header_dim),
                }
                continue;
            }
        }

        let d = *dim.get_or_insert(rest.len());
        if d == 0 || rest.len() != d {
            return Err(parse_err(
                lineno,
                format!("expected {d} vector components, found {}", rest.len()),
            ));
        }
        saw_entry = true;
        if keep.is_some_and(|k| !k.contains(token)) || vocab.contains_key(token) {
            // Still validate the numbers so a corrupt file is reported.
            for f in &rest {
                f.parse::<f64>()
                    .map_err(|_| parse_err(lineno, format!("cannot parse {f:?} as a real")))?;
            }
            continue;
        }
        for f in &rest {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(lineno, format!("cannot parse {f:?} as a real")))?;
            data.push(v);
        }
        vocab.insert(token.to_string(), vocab.len());
    }

    if !saw_entry {
        return Err(Error::Empty(format!(
            "{}: no embedding vectors",
            path.display()
        )));
    }
    let dim = dim.expect("dimension known once an entry was read");
    let vectors = Matrix::from_vec(vocab.len(), dim, data)?;
    Ok(EmbeddingTable {
        dim,
        vocab,
        vectors,
    })
}

/// A first line made of exactly two integer fields is a `count dim` header.
fn parse_header(first: &str, rest: &[&str]) -> Option<usize> {
    if rest.len() != 1 {
        return None;
    }
    first.parse::<u64>().ok()?;
    rest[0].parse::<usize>().ok().filter(|&d| d > 0)
}

/// Lowercases and splits on whitespace, isolating every ASCII punctuation
/// character as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if ch.is_ascii_punctuation() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_string());
        } else {
            current.extend(ch.to_lowercase());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// An `m × d` matrix with one embedding row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceMatrix {
    tokens: Vec<String>,
    values: Matrix,
}

impl SentenceMatrix {
    /// Wraps a raw matrix; `tokens` may be empty for synthetic inputs.
    pub fn from_matrix(values: Matrix, tokens: Vec<String>) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "sentence matrix must be non-empty, got {:?}",
                values.shape()
            )));
        }
        if !tokens.is_empty() && tokens.len() != values.rows() {
            return Err(Error::InvalidArgument(format!(
                "{} tokens for {} rows",
                tokens.len(),
                values.rows()
            )));
        }
        Ok(SentenceMatrix { tokens, values })
    }

    pub fn m(&self) -> usize {
        self.values.rows()
    }

    pub fn d(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Maps the first `max_len` tokens to their vectors. Out-of-vocabulary
/// tokens get the zero vector; an empty sequence becomes one zero row.
pub fn embed_sentence<S: AsRef<str>>(
    tokens: &[S],
    table: &EmbeddingTable,
    max_len: usize,
) -> SentenceMatrix {
    let max_len = max_len.max(1);
    let kept: Vec<String> = tokens
        .iter()
        .take(max_len)
        .map(|t| t.as_ref().to_string())
        .collect();
    let m = kept.len().max(1);
    let mut values = Matrix::zeros(m, table.dim());
    for (r, tok) in kept.iter().enumerate() {
        if let Some(v) = table.lookup(tok) {
            values.row_mut(r).copy_from_slice(v);
        }
    }
    SentenceMatrix {
        tokens: kept,
        values,
    }
}
