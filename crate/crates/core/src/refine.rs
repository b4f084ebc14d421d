//! Score refinement applied to a query's candidates before calibration.
//!
//! The rank-discounted transform normalizes each score by the query's top
//! score and multiplies by `1 / ln(1 + r^lambda)`, where `r` is the 1-based
//! rank. Normalizing removes per-query scale differences; the discount
//! widens the gap between the head of the list and its tail. Max-score and
//! z-score normalizations are provided for comparison.

use std::cell::RefCell;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use rayon::prelude::*;

use crate::types::{QueryRun, RetrievalRun};

/// Which refinement to apply. Serialized as a config string:
/// `identity`, `maxscore`, `zscore` or `logrank:<lambda>`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum TransformSpec {
    #[default]
    Identity,
    MaxScore,
    ZScore,
    LogRankDiscount {
        lambda: f64,
    },
}

impl TransformSpec {
    pub fn log_rank(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidArg(format!(
                "lambda must lie in [0, 1], got {lambda}"
            )));
        }
        Ok(TransformSpec::LogRankDiscount { lambda })
    }
}

impl fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformSpec::Identity => f.write_str("identity"),
            TransformSpec::MaxScore => f.write_str("maxscore"),
            TransformSpec::ZScore => f.write_str("zscore"),
            // `{}` on f64 prints the shortest string that parses back exactly.
            TransformSpec::LogRankDiscount { lambda } => write!(f, "logrank:{lambda}"),
        }
    }
}

impl FromStr for TransformSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" => Ok(TransformSpec::Identity),
            "maxscore" => Ok(TransformSpec::MaxScore),
            "zscore" => Ok(TransformSpec::ZScore),
            other => {
                let lambda = other
                    .strip_prefix("logrank:")
                    .ok_or_else(|| Error::InvalidArg(format!("unknown transform `{s}`")))?;
                let lambda: f64 = lambda
                    .parse()
                    .map_err(|_| Error::InvalidArg(format!("bad lambda in `{s}`")))?;
                TransformSpec::log_rank(lambda)
            }
        }
    }
}

impl Serialize for TransformSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TransformSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Rank discount `1 / ln(1 + r^lambda)`.
pub fn rank_discount(rank: usize, lambda: f64) -> f64 {
    1.0 / (1.0 + (rank as f64).powf(lambda)).ln()
}

/// Per-thread memo of `rank_discount(1..=len, lambda)` for the last lambda
/// seen; refining many queries with one lambda is the common pattern.
struct DiscountTable {
    lambda_bits: u64,
    values: Vec<f64>,
}

impl DiscountTable {
    fn ensure(&mut self, lambda: f64, len: usize) {
        if self.lambda_bits != lambda.to_bits() {
            self.lambda_bits = lambda.to_bits();
            self.values.clear();
        }
        for r in self.values.len() + 1..=len {
            self.values.push(rank_discount(r, lambda));
        }
    }
}

thread_local! {
    static DISCOUNTS: RefCell<DiscountTable> = const {
        RefCell::new(DiscountTable { lambda_bits: u64::MAX, values: Vec::new() })
    };
}

/// Applies `spec` to a raw run. The result keeps the same documents in the
/// same order and is tagged with `spec`.
pub fn refine(run: &QueryRun, spec: TransformSpec) -> Result<QueryRun> {
    if run.transform() != TransformSpec::Identity {
        return Err(Error::AlreadyRefined(run.query_id().to_string()));
    }
    if run.is_empty() {
        return Err(Error::EmptyCandidateList);
    }
    let scores: Vec<f64> = run.scores().collect();
    let refined = match spec {
        TransformSpec::Identity => scores,
        TransformSpec::MaxScore => {
            let max = positive_max(&scores)?;
            scores.iter().map(|s| s / max).collect()
        }
        TransformSpec::ZScore => {
            let n = scores.len() as f64;
            let mean = scores.iter().sum::<f64>() / n;
            let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd == 0.0 || !sd.is_finite() {
                return Err(Error::DegenerateScores);
            }
            scores.iter().map(|s| (s - mean) / sd).collect()
        }
        TransformSpec::LogRankDiscount { lambda } => {
            if !(0.0..=1.0).contains(&lambda) {
                return Err(Error::InvalidArg(format!(
                    "lambda must lie in [0, 1], got {lambda}"
                )));
            }
            let max = positive_max(&scores)?;
            DISCOUNTS.with_borrow_mut(|table| {
                table.ensure(lambda, run.len());
                run.candidates()
                    .iter()
                    .map(|c| (c.score / max) * table.values[c.rank - 1])
                    .collect()
            })
        }
    };
    Ok(run.with_scores(refined, spec))
}

/// Refines every query of a run in parallel.
pub fn refine_run(run: &RetrievalRun, spec: TransformSpec) -> Result<RetrievalRun> {
    let refined: Vec<QueryRun> = run
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|q| refine(q, spec))
        .collect::<Result<_>>()?;
    let mut out = RetrievalRun::new(run.n_trunc())?;
    for q in refined {
        out.insert(q)?;
    }
    Ok(out)
}

fn positive_max(scores: &[f64]) -> Result<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max > 0.0 {
        Ok(max)
    } else {
        Err(Error::NonPositiveMax(max))
    }
}
