//! Exact dense retrieval: cosine scoring by full scan plus top-N selection.
//!
//! Embedding files come in two flavours:
//!
//! - binary: magic `CRET1`, `u32` dim, `u64` count, then `count` records of
//!   (`u16` id length, id bytes, `dim` little-endian `f32` values);
//! - text: one document per line, `id<TAB>v1,v2,...,vd`.
//!
//! [`EmbeddingMatrix::load`] sniffs the magic and picks the right reader.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{ranking_order, DocId, QueryRun};

pub const BINARY_MAGIC: &[u8; 5] = b"CRET1";

/// Row-major embedding matrix keyed by document (or query) id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<DocId>,
    data: Vec<f64>,
    dim: usize,
    normalized: bool,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<DocId>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::InvalidArg(format!(
                "{} ids for {} rows",
                ids.len(),
                rows.len()
            )));
        }
        let dim = rows.first().map_or(0, Vec::len);
        if dim == 0 && !rows.is_empty() {
            return Err(Error::InvalidArg(
                "embedding dimension must be positive".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (id, row) in ids.iter().zip(&rows) {
            if !seen.insert(id) {
                return Err(Error::InvalidArg(format!("duplicate embedding id `{id}`")));
            }
            if row.len() != dim {
                return Err(Error::Dim {
                    expected: dim,
                    actual: row.len(),
                });
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidScore {
                    doc: id.to_string(),
                    score: *v,
                });
            }
            data.extend_from_slice(row);
        }
        Ok(EmbeddingMatrix {
            ids,
            data,
            dim,
            normalized: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[DocId] {
        &self.ids
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&DocId, &[f64])> {
        self.ids.iter().zip(self.data.chunks_exact(self.dim.max(1)))
    }

    /// Scales every row to unit L2 norm. Zero rows are rejected.
    pub fn normalize(mut self) -> Result<Self> {
        if self.normalized {
            return Ok(self);
        }
        for (i, row) in self.data.chunks_exact_mut(self.dim.max(1)).enumerate() {
            let norm = l2(row);
            if norm == 0.0 {
                return Err(Error::InvalidArg(format!(
                    "embedding `{}` has zero norm",
                    self.ids[i]
                )));
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        self.normalized = true;
        Ok(self)
    }

    /// Loads a binary or text embedding file, detected by magic bytes.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        let head = reader.fill_buf().map_err(|e| Error::io(path, e))?;
        if head.starts_with(BINARY_MAGIC) {
            read_binary(path, reader)
        } else {
            read_text(path, reader)
        }
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        let dim = u32::try_from(self.dim)
            .map_err(|_| Error::InvalidArg("dimension exceeds u32".into()))?;
        w.write_all(BINARY_MAGIC).map_err(io)?;
        w.write_all(&dim.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.len() as u64).to_le_bytes())
            .map_err(io)?;
        for (id, row) in self.rows() {
            let bytes = id.as_str().as_bytes();
            let len = u16::try_from(bytes.len())
                .map_err(|_| Error::InvalidArg(format!("id `{id}` longer than 65535 bytes")))?;
            w.write_all(&len.to_le_bytes()).map_err(io)?;
            w.write_all(bytes).map_err(io)?;
            for v in row {
                w.write_all(&(*v as f32).to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn save_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        for (id, row) in self.rows() {
            let values: Vec<String> = row.iter().map(f64::to_string).collect();
            writeln!(w, "{id}\t{}", values.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

fn read_binary(path: &Path, mut r: impl Read) -> Result<EmbeddingMatrix> {
    let truncated = |what: &str| Error::parse(path, 0, format!("truncated binary file ({what})"));
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(|_| truncated("magic"))?;
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4).map_err(|_| truncated("dim"))?;
    let dim = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b8).map_err(|_| truncated("count"))?;
    let count = u64::from_le_bytes(b8) as usize;
    let mut ids = Vec::with_capacity(count.min(1 << 20));
    let mut rows = Vec::with_capacity(count.min(1 << 20));
    let mut b2 = [0u8; 2];
    for record in 0..count {
        r.read_exact(&mut b2).map_err(|_| truncated("id length"))?;
        let mut id = vec![0u8; u16::from_le_bytes(b2) as usize];
        r.read_exact(&mut id).map_err(|_| truncated("id"))?;
        let id = String::from_utf8(id)
            .map_err(|_| Error::parse(path, record + 1, "id is not valid UTF-8"))?;
        let id = DocId::new(id).map_err(|_| Error::parse(path, record + 1, "empty id"))?;
        let mut row = Vec::with_capacity(dim);
        for _ in 0..dim {
            r.read_exact(&mut b4).map_err(|_| truncated("vector"))?;
            row.push(f64::from(f32::from_le_bytes(b4)));
        }
        ids.push(id);
        rows.push(row);
    }
    EmbeddingMatrix::new(ids, rows)
}

fn read_text(path: &Path, r: impl BufRead) -> Result<EmbeddingMatrix> {
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, lineno, "expected `id<TAB>v1,v2,...`"))?;
        let id = DocId::new(id).map_err(|_| Error::parse(path, lineno, "empty id"))?;
        let row = values
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(path, lineno, format!("bad vector value: {e}")))?;
        if let Some(first) = rows.first().map(Vec::len) {
            if first != row.len() {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected {first} values, found {}", row.len()),
                ));
            }
        }
        ids.push(id);
        rows.push(row);
    }
    EmbeddingMatrix::new(ids, rows)
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity between `query` and every corpus row.
pub fn cosine_scores(query: &[f64], corpus: &EmbeddingMatrix) -> Result<Vec<(DocId, f64)>> {
    if query.len() != corpus.dim() {
        return Err(Error::Dim {
            expected: corpus.dim(),
            actual: query.len(),
        });
    }
    if query.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidQuery(
            "query vector has non-finite values".into(),
        ));
    }
    let qnorm = l2(query);
    if qnorm == 0.0 {
        return Err(Error::InvalidQuery("query vector has zero norm".into()));
    }
    Ok(corpus
        .rows()
        .map(|(id, row)| {
            let dot: f64 = query.iter().zip(row).map(|(a, b)| a * b).sum();
            let denom = if corpus.is_normalized() {
                qnorm
            } else {
                qnorm * l2(row)
            };
            (id.clone(), dot / denom)
        })
        .collect())
}

/// Keeps the `n` highest-scoring candidates (all of them if fewer).
pub fn top_n(query_id: &str, mut scores: Vec<(DocId, f64)>, n: usize) -> Result<QueryRun> {
    if n < 1 {
        return Err(Error::InvalidArg("n must be at least 1".into()));
    }
    if let Some((doc, score)) = scores.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::InvalidScore {
            doc: doc.to_string(),
            score: *score,
        });
    }
    if scores.len() > n {
        scores.select_nth_unstable_by(n - 1, ranking_order);
        scores.truncate(n);
    }
    QueryRun::new(query_id, scores)
}

/// Scores every query against the corpus in parallel and keeps the top `n`.
/// Results come back in the query matrix's row order.
pub fn search_all(
    queries: &EmbeddingMatrix,
    corpus: &EmbeddingMatrix,
    n: usize,
) -> Result<Vec<QueryRun>> {
    (0..queries.len())
        .into_par_iter()
        .map(|i| {
            let scores = cosine_scores(queries.row(i), corpus)?;
            top_n(queries.ids()[i].as_str(), scores, n)
        })
        .collect()
}
