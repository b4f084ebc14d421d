//! Run and qrels files.
//!
//! Runs are TSV `query_id<TAB>doc_id<TAB>score`; six-column TREC run lines
//! (`qid Q0 doc rank score tag`) are accepted as well. Qrels are TSV
//! `query_id<TAB>doc_id<TAB>grade`, with four-column TREC qrels and a
//! BEIR-style header line also accepted. Paths ending in `.gz` are
//! transparently (de)compressed.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::types::{DocId, GroundTruth, QueryRun, RetrievalRun};

fn is_gz(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

pub(crate) fn open_lines(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(if is_gz(path) {
        Box::new(BufReader::new(MultiGzDecoder::new(file)))
    } else {
        Box::new(BufReader::new(file))
    })
}

pub(crate) fn create_writer(path: &Path) -> Result<Box<dyn Write>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(if is_gz(path) {
        Box::new(GzEncoder::new(BufWriter::new(file), Compression::default()))
    } else {
        Box::new(BufWriter::new(file))
    })
}

fn fields(line: &str) -> Vec<&str> {
    if line.contains('\t') {
        line.split('\t').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Loads a run file, sorting each query's candidates and keeping the top
/// `n_trunc`.
pub fn load_run(path: impl AsRef<Path>, n_trunc: usize) -> Result<RetrievalRun> {
    let path = path.as_ref();
    let mut per_query: BTreeMap<String, Vec<(DocId, f64)>> = BTreeMap::new();
    let mut seen: HashSet<(String, DocId)> = HashSet::new();
    for (i, line) in open_lines(path)?.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f = fields(line);
        let (query, doc, score) = match f.len() {
            3 => (f[0], f[1], f[2]),
            6 => (f[0], f[2], f[4]),
            n => {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected 3 fields (query, doc, score), found {n}"),
                ))
            }
        };
        if query.is_empty() {
            return Err(Error::parse(path, lineno, "empty query id"));
        }
        let doc = DocId::new(doc).map_err(|_| Error::parse(path, lineno, "empty doc id"))?;
        let score: f64 = score
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad score `{score}`")))?;
        if !score.is_finite() {
            return Err(Error::parse(
                path,
                lineno,
                format!("non-finite score `{score}`"),
            ));
        }
        if !seen.insert((query.to_string(), doc.clone())) {
            return Err(Error::DuplicateEntry {
                query: query.to_string(),
                doc: doc.to_string(),
            });
        }
        per_query
            .entry(query.to_string())
            .or_default()
            .push((doc, score));
    }
    let mut run = RetrievalRun::new(n_trunc)?;
    for (query, candidates) in per_query {
        run.insert(QueryRun::new(query, candidates)?)?;
    }
    Ok(run)
}

/// Writes a run in rank order. Scores are printed in shortest round-trip
/// form so a reload is bit-exact.
pub fn write_run(path: impl AsRef<Path>, run: &RetrievalRun) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = create_writer(path)?;
    for q in run.iter() {
        for c in q.candidates() {
            writeln!(w, "{}\t{}\t{}", q.query_id(), c.doc, c.score).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Graded relevance judgments.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    entries: BTreeMap<String, BTreeMap<DocId, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query: impl Into<String>, doc: DocId, grade: u32) {
        self.entries
            .entry(query.into())
            .or_default()
            .insert(doc, grade);
    }

    pub fn get(&self, query: &str) -> Option<&BTreeMap<DocId, u32>> {
        self.entries.get(query)
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Qrels with a single grade-1 document per labeled query.
    pub fn from_ground_truth(truth: &GroundTruth) -> Self {
        let mut q = Qrels::new();
        for (query, doc) in truth.iter() {
            q.insert(query, doc.clone(), 1);
        }
        q
    }
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let mut qrels = Qrels::new();
    for (i, line) in open_lines(path)?.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f = fields(line);
        let (query, doc, grade) = match f.len() {
            3 => (f[0], f[1], f[2]),
            4 => (f[0], f[2], f[3]),
            n => {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected 3 fields (query, doc, grade), found {n}"),
                ))
            }
        };
        let grade: u32 = match grade.parse::<i64>() {
            Ok(g) if g >= 0 => g as u32,
            Ok(g) => {
                return Err(Error::parse(path, lineno, format!("negative grade {g}")));
            }
            // BEIR qrels start with `query-id corpus-id score`.
            Err(_) if lineno == 1 => continue,
            Err(_) => return Err(Error::parse(path, lineno, format!("bad grade `{grade}`"))),
        };
        let doc = DocId::new(doc).map_err(|_| Error::parse(path, lineno, "empty doc id"))?;
        if query.is_empty() {
            return Err(Error::parse(path, lineno, "empty query id"));
        }
        if qrels.get(query).is_some_and(|m| m.contains_key(&doc)) {
            return Err(Error::DuplicateEntry {
                query: query.to_string(),
                doc: doc.to_string(),
            });
        }
        qrels.insert(query, doc, grade);
    }
    Ok(qrels)
}

pub fn write_qrels(path: impl AsRef<Path>, qrels: &Qrels) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = create_writer(path)?;
    for (query, docs) in &qrels.entries {
        for (doc, grade) in docs {
            writeln!(w, "{query}\t{doc}\t{grade}").map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Collapses graded qrels to one ground-truth document per query: the
/// relevant document retrieved with the highest score. Queries whose
/// relevant documents were all missed get the smallest relevant id and are
/// flagged as misses. Queries absent from the run are skipped.
pub fn reduce_qrels(qrels: &Qrels, run: &RetrievalRun) -> Result<GroundTruth> {
    let mut truth = GroundTruth::new();
    for (query, docs) in &qrels.entries {
        let Some(q) = run.get(query) else { continue };
        let relevant: Vec<&DocId> = docs
            .iter()
            .filter(|(_, &g)| g > 0)
            .map(|(d, _)| d)
            .collect();
        if relevant.is_empty() {
            return Err(Error::NoRelevantDoc(query.clone()));
        }
        // Candidates are in rank order, so the first relevant hit has the
        // highest score (ties already resolved by doc id).
        match q
            .candidates()
            .iter()
            .find(|c| docs.get(&c.doc).is_some_and(|&g| g > 0))
        {
            Some(hit) => truth.insert(query.clone(), hit.doc.clone()),
            None => {
                // BTreeMap order: the first relevant id is the smallest.
                truth.insert(query.clone(), relevant[0].clone());
                truth.mark_miss(query.clone());
            }
        }
    }
    Ok(truth)
}
