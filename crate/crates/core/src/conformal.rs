//! Split-conformal calibration and prediction-set construction.
//!
//! Four calibrators share one recipe: compute a nonconformity score for the
//! ground-truth document of every calibration query, take the
//! `ceil((n + 1)(1 - alpha))`-th smallest as the cutoff, then include every
//! test candidate whose own score does not exceed it.
//!
//! - `Vanilla`: nonconformity is the negated (possibly refined) score.
//! - `TopK`: nonconformity is the rank; the cutoff is a fixed set size.
//! - `Aps`: cumulative softmax mass down to and including the candidate.
//! - `Raps`: APS plus `lambda_reg * max(0, rank - k_reg)`.
//!
//! A ground-truth document missing from the truncated run has infinite
//! nonconformity; it inflates the cutoff during calibration and is never
//! covered at test time.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::refine::TransformSpec;
use crate::types::{DocId, PredictionSet, QueryRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Vanilla,
    TopK,
    Aps,
    Raps,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Vanilla, Method::TopK, Method::Aps, Method::Raps];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Vanilla => "vanilla",
            Method::TopK => "topk",
            Method::Aps => "aps",
            Method::Raps => "raps",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vanilla" | "threshold" | "baseline" => Ok(Method::Vanilla),
            "topk" => Ok(Method::TopK),
            "aps" => Ok(Method::Aps),
            "raps" => Ok(Method::Raps),
            _ => Err(Error::InvalidArg(format!("unknown method `{s}`"))),
        }
    }
}

/// Rank regularization for RAPS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RapsParams {
    pub k_reg: usize,
    pub lambda_reg: f64,
}

impl Default for RapsParams {
    fn default() -> Self {
        RapsParams {
            k_reg: 5,
            lambda_reg: 0.01,
        }
    }
}

pub(crate) fn validate_alpha(alpha: f64) -> Result<f64> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(alpha)
    } else {
        Err(Error::InvalidArg(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

/// 1-based order-statistic index `ceil((n + 1)(1 - alpha))`.
///
/// A relative slack of 1e-12 absorbs representation error in `1 - alpha`
/// (e.g. `20 * 0.95` landing a hair above 19).
pub fn quantile_index(n: usize, alpha: f64) -> usize {
    let x = (n as f64 + 1.0) * (1.0 - alpha);
    (x - x.abs() * 1e-12).ceil().max(1.0) as usize
}

/// Nonconformity of `truth` under the vanilla score: the negated score, or
/// `+inf` when the document was not retrieved.
pub fn nonconformity_vanilla(run: &QueryRun, truth: &DocId) -> f64 {
    run.candidates()
        .iter()
        .find(|c| &c.doc == truth)
        .map_or(f64::INFINITY, |c| -c.score)
}

/// Cumulative softmax mass by rank, temperature 1. Entry `i` is the mass of
/// ranks `1..=i + 1`; the last entry is 1 up to rounding.
pub fn aps_cumulative(run: &QueryRun) -> Vec<f64> {
    let max = run.scores().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = run.scores().map(|s| (s - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w / total;
            acc
        })
        .collect()
}

pub fn nonconformity_aps(run: &QueryRun, truth: &DocId) -> f64 {
    match run.rank_of(truth) {
        Some(rank) => aps_cumulative(run)[rank - 1],
        None => f64::INFINITY,
    }
}

pub fn nonconformity_raps(run: &QueryRun, truth: &DocId, k_reg: usize, lambda_reg: f64) -> f64 {
    match run.rank_of(truth) {
        Some(rank) => aps_cumulative(run)[rank - 1] + raps_penalty(rank, k_reg, lambda_reg),
        None => f64::INFINITY,
    }
}

fn raps_penalty(rank: usize, k_reg: usize, lambda_reg: f64) -> f64 {
    lambda_reg * rank.saturating_sub(k_reg) as f64
}

/// Per-candidate nonconformity in rank order for the threshold-based
/// methods. Calibration and prediction both go through here so the two
/// sides compare bit-identical values.
pub fn candidate_scores(run: &QueryRun, method: Method, raps: RapsParams) -> Vec<f64> {
    match method {
        Method::Vanilla => run.scores().map(|s| -s).collect(),
        Method::TopK => run.candidates().iter().map(|c| c.rank as f64).collect(),
        Method::Aps => aps_cumulative(run),
        Method::Raps => aps_cumulative(run)
            .into_iter()
            .enumerate()
            .map(|(i, c)| c + raps_penalty(i + 1, raps.k_reg, raps.lambda_reg))
            .collect(),
    }
}

/// Nonconformity of one calibration query's ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct NonconformityRecord {
    pub query_id: String,
    pub c_true: f64,
}

impl NonconformityRecord {
    pub fn new(run: &QueryRun, truth: &DocId, method: Method, raps: RapsParams) -> Self {
        let c_true = match run.rank_of(truth) {
            Some(rank) => candidate_scores(run, method, raps)[rank - 1],
            None => f64::INFINITY,
        };
        NonconformityRecord {
            query_id: run.query_id().to_string(),
            c_true,
        }
    }
}

/// Conformal threshold: the `m`-th smallest score with
/// `m = ceil((n + 1)(1 - alpha))`, or `+inf` when `m > n`.
pub fn calibrate_threshold(records: &[NonconformityRecord], alpha: f64) -> Result<f64> {
    let scores: Vec<f64> = records.iter().map(|r| r.c_true).collect();
    threshold_from_scores(&scores, alpha)
}

pub fn threshold_from_scores(scores: &[f64], alpha: f64) -> Result<f64> {
    validate_alpha(alpha)?;
    if scores.is_empty() {
        return Err(Error::NoCalibrationData);
    }
    if scores.iter().any(|c| c.is_nan()) {
        return Err(Error::InvalidArg("NaN nonconformity score".into()));
    }
    let m = quantile_index(scores.len(), alpha);
    if m > scores.len() {
        return Ok(f64::INFINITY);
    }
    let mut sorted = scores.to_vec();
    let (_, kth, _) = sorted.select_nth_unstable_by(m - 1, f64::total_cmp);
    Ok(*kth)
}

/// Fixed set size: the `m`-th smallest ground-truth rank (misses count as
/// infinitely deep). Falls back to `n_trunc` when that order statistic is
/// a miss or `m > n`.
pub fn calibrate_topk(ranks: &[Option<usize>], alpha: f64, n_trunc: usize) -> Result<usize> {
    validate_alpha(alpha)?;
    if ranks.is_empty() {
        return Err(Error::NoCalibrationData);
    }
    let m = quantile_index(ranks.len(), alpha);
    if m > ranks.len() {
        return Ok(n_trunc);
    }
    let mut sorted: Vec<usize> = ranks.iter().map(|r| r.unwrap_or(usize::MAX)).collect();
    sorted.sort_unstable();
    Ok(match sorted[m - 1] {
        usize::MAX => n_trunc,
        k => k.min(n_trunc),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cutoff {
    Threshold(f64),
    Size(usize),
}

impl Cutoff {
    pub fn value(&self) -> f64 {
        match *self {
            Cutoff::Threshold(t) => t,
            Cutoff::Size(k) => k as f64,
        }
    }
}

/// A fitted calibrator. Serializes to JSON with `tau` (or `k` for TopK);
/// an infinite `tau` is written as the string `"inf"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CalibratorRepr", into = "CalibratorRepr")]
pub struct Calibrator {
    pub method: Method,
    pub alpha: f64,
    pub transform: TransformSpec,
    pub cutoff: Cutoff,
    pub raps: RapsParams,
    pub n_calibration: usize,
}

impl Calibrator {
    /// Fits on `(refined run, ground truth)` pairs. Every run must carry
    /// `transform`.
    pub fn fit(
        method: Method,
        alpha: f64,
        transform: TransformSpec,
        raps: RapsParams,
        pairs: &[(&QueryRun, &DocId)],
        n_trunc: usize,
    ) -> Result<Self> {
        validate_alpha(alpha)?;
        if pairs.is_empty() {
            return Err(Error::NoCalibrationData);
        }
        for (run, _) in pairs {
            check_transform(transform, run)?;
        }
        let cutoff = match method {
            Method::TopK => {
                let ranks: Vec<_> = pairs.iter().map(|(run, doc)| run.rank_of(doc)).collect();
                Cutoff::Size(calibrate_topk(&ranks, alpha, n_trunc)?)
            }
            _ => {
                let records: Vec<_> = pairs
                    .iter()
                    .map(|(run, doc)| NonconformityRecord::new(run, doc, method, raps))
                    .collect();
                Cutoff::Threshold(calibrate_threshold(&records, alpha)?)
            }
        };
        Ok(Calibrator {
            method,
            alpha,
            transform,
            cutoff,
            raps,
            n_calibration: pairs.len(),
        })
    }

    /// Builds the prediction set for a run refined with `self.transform`.
    pub fn predict(&self, run: &QueryRun) -> Result<PredictionSet> {
        check_transform(self.transform, run)?;
        let members = match self.cutoff {
            Cutoff::Size(k) => run
                .candidates()
                .iter()
                .take_while(|c| c.rank <= k)
                .map(|c| c.doc.clone())
                .collect(),
            Cutoff::Threshold(tau) => run
                .candidates()
                .iter()
                .zip(candidate_scores(run, self.method, self.raps))
                .filter(|(_, c)| *c <= tau)
                .map(|(cand, _)| cand.doc.clone())
                .collect(),
        };
        Ok(PredictionSet {
            query_id: run.query_id().to_string(),
            members,
            cutoff_value: self.cutoff.value(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

fn check_transform(expected: TransformSpec, run: &QueryRun) -> Result<()> {
    if run.transform() == expected {
        Ok(())
    } else {
        Err(Error::TransformMismatch {
            expected: expected.to_string(),
            actual: run.transform().to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum ThresholdRepr {
    Finite(f64),
    Named(Infinite),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Infinite {
    #[serde(rename = "inf")]
    Inf,
}

#[derive(Serialize, Deserialize)]
struct CalibratorRepr {
    method: Method,
    alpha: f64,
    transform: TransformSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau: Option<ThresholdRepr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    raps_k_reg: usize,
    raps_lambda_reg: f64,
    n_calibration: usize,
}

impl From<Calibrator> for CalibratorRepr {
    fn from(c: Calibrator) -> Self {
        let (tau, k) = match c.cutoff {
            Cutoff::Threshold(t) if t == f64::INFINITY => {
                (Some(ThresholdRepr::Named(Infinite::Inf)), None)
            }
            Cutoff::Threshold(t) => (Some(ThresholdRepr::Finite(t)), None),
            Cutoff::Size(k) => (None, Some(k)),
        };
        CalibratorRepr {
            method: c.method,
            alpha: c.alpha,
            transform: c.transform,
            tau,
            k,
            raps_k_reg: c.raps.k_reg,
            raps_lambda_reg: c.raps.lambda_reg,
            n_calibration: c.n_calibration,
        }
    }
}

impl TryFrom<CalibratorRepr> for Calibrator {
    type Error = Error;

    fn try_from(r: CalibratorRepr) -> Result<Self> {
        validate_alpha(r.alpha)?;
        if r.n_calibration == 0 {
            return Err(Error::InvalidArg("n_calibration must be at least 1".into()));
        }
        let cutoff = match (r.method, r.tau, r.k) {
            (Method::TopK, None, Some(k)) => Cutoff::Size(k),
            (Method::TopK, _, _) => {
                return Err(Error::InvalidArg(
                    "topk calibrator needs `k` and no `tau`".into(),
                ))
            }
            (_, Some(ThresholdRepr::Finite(t)), None) => Cutoff::Threshold(t),
            (_, Some(ThresholdRepr::Named(Infinite::Inf)), None) => {
                Cutoff::Threshold(f64::INFINITY)
            }
            _ => {
                return Err(Error::InvalidArg(format!(
                    "{} calibrator needs `tau` and no `k`",
                    r.method
                )))
            }
        };
        Ok(Calibrator {
            method: r.method,
            alpha: r.alpha,
            transform: r.transform,
            cutoff,
            raps: RapsParams {
                k_reg: r.raps_k_reg,
                lambda_reg: r.raps_lambda_reg,
            },
            n_calibration: r.n_calibration,
        })
    }
}
