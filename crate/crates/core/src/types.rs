//! Domain types shared by every other module.
//!
//! Everything here is immutable once built. Constructors enforce the ordering
//! invariants (score descending, ties by ascending [`DocId`], 1-based
//! contiguous ranks) so downstream code can rely on them without re-checking.

use std::borrow::Borrow;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::refine::TransformSpec;

/// Default candidate-list truncation depth.
pub const DEFAULT_N_TRUNC: usize = 2000;

/// Opaque document identifier. Cloning is a reference-count bump.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DocId(Arc<str>);

impl DocId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::InvalidArg("document id must be non-empty".into()));
        }
        Ok(DocId(id.into()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Borrow<str> for DocId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl From<&str> for DocId {
    /// Panics on an empty string; use [`DocId::new`] for untrusted input.
    fn from(s: &str) -> Self {
        DocId::new(s).expect("empty document id")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub doc: DocId,
    pub score: f64,
    /// 1-based position in descending-score order.
    pub rank: usize,
}

/// Total order used for ranking: score descending, then doc id ascending.
pub(crate) fn ranking_order(a: &(DocId, f64), b: &(DocId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Sorts `(doc, score)` pairs by descending score and assigns contiguous
/// 1-based ranks. Equal scores are ordered by ascending doc id.
pub fn sort_and_rank(candidates: Vec<(DocId, f64)>) -> Result<Vec<ScoredCandidate>> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidateList);
    }
    if let Some((doc, score)) = candidates.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::InvalidScore {
            doc: doc.to_string(),
            score: *score,
        });
    }
    let mut candidates = candidates;
    candidates.sort_by(ranking_order);
    Ok(candidates
        .into_iter()
        .enumerate()
        .map(|(i, (doc, score))| ScoredCandidate {
            doc,
            score,
            rank: i + 1,
        })
        .collect())
}

/// One query's ranked candidate list.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRun {
    query_id: String,
    candidates: Vec<ScoredCandidate>,
    transform: TransformSpec,
}

impl QueryRun {
    /// Builds a raw (unrefined) run. Candidates are sorted and ranked; a
    /// document appearing twice is rejected.
    pub fn new(query_id: impl Into<String>, candidates: Vec<(DocId, f64)>) -> Result<Self> {
        let query_id = query_id.into();
        let mut seen = BTreeSet::new();
        for (doc, _) in &candidates {
            if !seen.insert(doc) {
                return Err(Error::DuplicateEntry {
                    query: query_id,
                    doc: doc.to_string(),
                });
            }
        }
        Ok(QueryRun {
            candidates: sort_and_rank(candidates)?,
            query_id,
            transform: TransformSpec::Identity,
        })
    }

    /// Replaces scores in rank order; caller guarantees `scores.len()` matches
    /// and that the sequence keeps the existing ordering.
    pub(crate) fn with_scores(&self, scores: Vec<f64>, transform: TransformSpec) -> QueryRun {
        debug_assert_eq!(scores.len(), self.candidates.len());
        let candidates = self
            .candidates
            .iter()
            .zip(scores)
            .map(|(c, score)| ScoredCandidate {
                doc: c.doc.clone(),
                score,
                rank: c.rank,
            })
            .collect();
        QueryRun {
            query_id: self.query_id.clone(),
            candidates,
            transform,
        }
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn candidates(&self) -> &[ScoredCandidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Transform that produced the current scores.
    pub fn transform(&self) -> TransformSpec {
        self.transform
    }

    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.candidates.iter().map(|c| c.score)
    }

    /// 1-based rank of `doc`, or `None` if it was not retrieved.
    pub fn rank_of(&self, doc: &DocId) -> Option<usize> {
        self.candidates
            .iter()
            .find(|c| &c.doc == doc)
            .map(|c| c.rank)
    }

    /// Keeps only the top `n` candidates.
    pub fn truncate(&mut self, n: usize) {
        self.candidates.truncate(n.max(1));
    }
}

/// Per-query runs keyed by query id, all truncated to `n_trunc`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalRun {
    runs: BTreeMap<String, QueryRun>,
    n_trunc: usize,
}

impl RetrievalRun {
    pub fn new(n_trunc: usize) -> Result<Self> {
        if n_trunc == 0 {
            return Err(Error::InvalidArg("n_trunc must be at least 1".into()));
        }
        Ok(RetrievalRun {
            runs: BTreeMap::new(),
            n_trunc,
        })
    }

    /// Adds a query run, truncating it to `n_trunc`.
    pub fn insert(&mut self, mut run: QueryRun) -> Result<()> {
        if self.runs.contains_key(run.query_id()) {
            return Err(Error::InvalidArg(format!(
                "query `{}` inserted twice",
                run.query_id()
            )));
        }
        run.truncate(self.n_trunc);
        self.runs.insert(run.query_id.clone(), run);
        Ok(())
    }

    pub fn n_trunc(&self) -> usize {
        self.n_trunc
    }

    pub fn get(&self, query_id: &str) -> Option<&QueryRun> {
        self.runs.get(query_id)
    }

    /// Query runs in ascending query-id order.
    pub fn iter(&self) -> impl Iterator<Item = &QueryRun> {
        self.runs.values()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.runs.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }
}

/// Single relevant document per query.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    labels: BTreeMap<String, DocId>,
    misses: BTreeSet<String>,
}

impl GroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, doc: DocId) {
        self.labels.insert(query_id.into(), doc);
    }

    /// Records that the query's relevant documents were all outside the run.
    pub fn mark_miss(&mut self, query_id: impl Into<String>) {
        self.misses.insert(query_id.into());
    }

    pub fn get(&self, query_id: &str) -> Option<&DocId> {
        self.labels.get(query_id)
    }

    pub fn require(&self, query_id: &str) -> Result<&DocId> {
        self.get(query_id)
            .ok_or_else(|| Error::MissingGroundTruth(query_id.to_string()))
    }

    pub fn is_miss(&self, query_id: &str) -> bool {
        self.misses.contains(query_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DocId)> {
        self.labels.iter().map(|(q, d)| (q.as_str(), d))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A conformal prediction set for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub query_id: String,
    /// Members in rank order.
    pub members: Vec<DocId>,
    /// Threshold (or set size, for TopK) that produced the set.
    pub cutoff_value: f64,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, doc: &DocId) -> bool {
        self.members.contains(doc)
    }
}
