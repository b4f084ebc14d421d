//! Conformal prediction sets for similarity-scored retrieval.
//!
//! A retrieval run (per-query ranked candidates with similarity scores) is
//! optionally refined by a monotone score transform, then wrapped by a
//! split-conformal calibrator so that each query gets a candidate set that
//! contains its relevant document with probability at least `1 - alpha`.
//!
//! The rank-discounted refinement ([`refine::TransformSpec::LogRankDiscount`])
//! normalizes each query's scores by its top score and applies an
//! inverse-log rank discount, which typically shrinks the calibrated sets
//! without touching the coverage guarantee.

pub mod conformal;
pub mod data;
pub mod error;
pub mod eval;
pub mod refine;
pub mod retrieval;
pub mod synth;
pub mod tune;
pub mod types;

pub use conformal::{Calibrator, Cutoff, Method, RapsParams};
pub use error::{Error, Result};
pub use eval::{BenchConfig, EvalReport, EvalRow, Setting, SplitMode, TransformChoice};
pub use refine::{refine, refine_run, TransformSpec};
pub use synth::{generate_synthetic, SynthConfig, TruthRank};
pub use tune::{tune_lambda, LambdaGrid, TuneResult};
pub use types::{DocId, GroundTruth, PredictionSet, QueryRun, RetrievalRun, ScoredCandidate};
