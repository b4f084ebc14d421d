//! Seeded synthetic retrieval runs with known ground truth.
//!
//! Each query draws a scale `kappa ~ LogNormal(0, scale_spread)`, a head
//! height whose dispersion also grows with `scale_spread`, and a
//! ground-truth rank from `truth_rank`. Scores follow the decreasing curve
//! from [`base_curve`] plus Gaussian noise, multiplied by `kappa`, and are
//! re-sorted with the ground truth tracked. Queries are i.i.d., hence
//! exchangeable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, LogNormal, Normal};

use crate::error::{Error, Result};
use crate::types::{DocId, GroundTruth, QueryRun, RetrievalRun, DEFAULT_N_TRUNC};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruthRank {
    /// `1 + Geometric(p)`: rank 1 with probability `p`.
    Geometric { p: f64 },
    /// Uniform on `1..=max_rank`.
    Uniform { max_rank: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_queries: usize,
    pub n_candidates: usize,
    pub scale_spread: f64,
    pub truth_rank: TruthRank,
    pub noise_sigma: f64,
    pub seed: u64,
    pub n_trunc: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_queries: 1000,
            n_candidates: 200,
            scale_spread: 1.0,
            truth_rank: TruthRank::Geometric { p: 0.3 },
            noise_sigma: 0.02,
            seed: 0,
            n_trunc: DEFAULT_N_TRUNC,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArg(m.to_string()));
        if self.n_queries == 0 || self.n_candidates == 0 {
            return bad("n_queries and n_candidates must be positive");
        }
        if self.n_candidates > self.n_trunc {
            return bad("n_candidates must not exceed n_trunc");
        }
        if !(self.scale_spread >= 0.0 && self.scale_spread.is_finite()) {
            return bad("scale_spread must be a finite value >= 0");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be a finite value >= 0");
        }
        match self.truth_rank {
            TruthRank::Geometric { p } if !(p > 0.0 && p <= 1.0) => {
                bad("geometric p must lie in (0, 1]")
            }
            TruthRank::Uniform { max_rank: 0 } => bad("uniform max_rank must be >= 1"),
            _ => Ok(()),
        }
    }
}

/// Noise-free score curve for one query, ranks `1..=n`.
///
/// A slowly sloping floor carries a head bump of height `head` that stays
/// nearly flat down to `truth_rank` and decays geometrically after it, so
/// queries whose relevant document sits deep have a crowded head of
/// near-equal competitors.
pub fn base_curve(n: usize, truth_rank: usize, head: f64) -> Vec<f64> {
    (1..=n)
        .map(|r| {
            let floor = 0.4
                + if n > 1 {
                    0.1 * (n - r) as f64 / (n - 1) as f64
                } else {
                    0.1
                };
            let bump = if r >= truth_rank {
                head * (-((r - truth_rank) as f64) / 5.0).exp()
            } else {
                head * (1.0 + 0.02 * (truth_rank - r) as f64)
            };
            floor + bump
        })
        .collect()
}

/// Head height: `0.2 * (1 + spread * (2u - 1))` with `u ~ U(0, 1)`, floored
/// at zero.
fn head_height(rng: &mut impl Rng, spread: f64) -> f64 {
    let u: f64 = rng.random();
    0.2 * (1.0 + spread * (2.0 * u - 1.0)).max(0.0)
}

fn doc_id(r: usize) -> DocId {
    DocId::new(format!("d{r:05}")).expect("non-empty")
}

/// Generates `cfg.n_queries` query runs (ids `q00000`, ...) and their
/// ground truth. A truth rank beyond `n_candidates` is a retrieval miss.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(RetrievalRun, GroundTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = LogNormal::new(0.0, cfg.scale_spread)
        .map_err(|e| Error::InvalidArg(format!("scale distribution: {e}")))?;
    let noise = Normal::new(0.0, cfg.noise_sigma)
        .map_err(|e| Error::InvalidArg(format!("noise distribution: {e}")))?;
    let geometric = match cfg.truth_rank {
        TruthRank::Geometric { p } => {
            Some(Geometric::new(p).map_err(|e| Error::InvalidArg(format!("truth ranks: {e}")))?)
        }
        TruthRank::Uniform { .. } => None,
    };
    let width = cfg.n_queries.saturating_sub(1).to_string().len().max(5);

    let mut run = RetrievalRun::new(cfg.n_trunc)?;
    let mut truth = GroundTruth::new();
    for i in 0..cfg.n_queries {
        let query = format!("q{i:0width$}");
        let kappa = scale.sample(&mut rng);
        let truth_rank = match (cfg.truth_rank, &geometric) {
            (_, Some(g)) => 1 + g.sample(&mut rng).min(u32::MAX as u64) as usize,
            (TruthRank::Uniform { max_rank }, None) => rng.random_range(1..=max_rank),
            _ => unreachable!(),
        };
        let head = head_height(&mut rng, cfg.scale_spread);
        let candidates = base_curve(cfg.n_candidates, truth_rank, head)
            .into_iter()
            .enumerate()
            .map(|(i, base)| (doc_id(i + 1), kappa * (base + noise.sample(&mut rng))))
            .collect();
        run.insert(QueryRun::new(query.clone(), candidates)?)?;
        truth.insert(query.clone(), doc_id(truth_rank));
        if truth_rank > cfg.n_candidates {
            truth.mark_miss(query);
        }
    }
    Ok((run, truth))
}
