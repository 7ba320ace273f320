//! Pre-trained word vectors and phrase pooling.
//!
//! The text format is GloVe's: one token followed by `dim` space-separated
//! floats per line. A leading word2vec-style `"<count> <dim>"` line is skipped.
//! Gzip-compressed files are detected by their magic bytes.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::util::open_maybe_gz;

pub const DEFAULT_DIM: usize = 300;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: Option<usize>,
    vectors: HashMap<String, Vec<f64>>,
}

/// Mean-pooled phrase vector. `oov` is set when no token was found.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseVector {
    pub values: Vec<f64>,
    pub oov: bool,
    pub missing_tokens: usize,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim: Some(dim),
            vectors: HashMap::new(),
        }
    }

    /// `None` for a table loaded from an empty file.
    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let token = token.into();
        match self.dim {
            Some(d) if d != vector.len() => {
                return Err(Error::Shape(format!(
                    "vector for {token:?} has length {}, table dim is {d}",
                    vector.len()
                )))
            }
            None => self.dim = Some(vector.len()),
            _ => {}
        }
        if self.vectors.contains_key(&token) {
            return Err(Error::invalid(format!("duplicate token {token:?}")));
        }
        self.vectors.insert(token, vector);
        Ok(())
    }

    /// Writes the table in the text format, tokens in sorted order.
    pub fn write_text(&self, mut out: impl Write) -> std::io::Result<()> {
        let mut tokens: Vec<&String> = self.vectors.keys().collect();
        tokens.sort();
        for t in tokens {
            write!(out, "{t}")?;
            for v in &self.vectors[t] {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

pub fn load_embeddings(path: &Path, expected_dim: Option<usize>) -> Result<EmbeddingTable> {
    let reader = BufReader::new(open_maybe_gz(path)?);
    let display = path.display().to_string();
    let mut table = EmbeddingTable {
        dim: expected_dim,
        vectors: HashMap::new(),
    };
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line_err = |message: String| Error::Line {
            path: display.clone(),
            line: line_no,
            message,
        };
        let line = line.map_err(|e| line_err(e.to_string()))?;
        let mut fields = line.split_ascii_whitespace();
        let Some(token) = fields.next() else {
            continue;
        };
        let rest: Vec<&str> = fields.collect();
        if line_no == 1
            && rest.len() == 1
            && token.parse::<u64>().is_ok()
            && rest[0].parse::<u64>().is_ok()
        {
            // word2vec header: "<count> <dim>"
            continue;
        }
        let values = rest
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| line_err(format!("bad float: {e}")))?;
        let dim = *table.dim.get_or_insert(values.len());
        if values.len() != dim || dim == 0 {
            return Err(line_err(format!(
                "expected {dim} floats, found {}",
                values.len()
            )));
        }
        if table.vectors.contains_key(token) {
            return Err(line_err(format!("duplicate token {token:?}")));
        }
        table.vectors.insert(token.to_string(), values);
    }
    if table.vectors.is_empty() {
        log::warn!("{display}: no vectors loaded");
        table.dim = expected_dim;
    }
    Ok(table)
}

/// Mean of the vectors of the phrase's in-vocabulary tokens.
pub fn phrase_vector(table: &EmbeddingTable, phrase: &str) -> Result<PhraseVector> {
    let tokens: Vec<&str> = phrase.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(Error::invalid("empty phrase"));
    }
    let dim = table
        .dim
        .ok_or_else(|| Error::invalid("embedding table has no dimension"))?;
    let mut sum = vec![0.0; dim];
    let mut found = 0usize;
    for t in &tokens {
        if let Some(v) = table.get(t) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            found += 1;
        }
    }
    if found > 0 {
        let n = found as f64;
        sum.iter_mut().for_each(|s| *s /= n);
    }
    Ok(PhraseVector {
        values: sum,
        oov: found == 0,
        missing_tokens: tokens.len() - found,
    })
}
