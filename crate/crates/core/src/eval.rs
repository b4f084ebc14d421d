//! Coverage and set-size evaluation, plus the benchmark driver that sweeps
//! calibrator settings over seeded calibration/test splits.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::conformal::{validate_alpha, Calibrator, Method, RapsParams};
use crate::error::{Error, Result};
use crate::refine::{refine, TransformSpec};
use crate::tune::{tune_lambda, LambdaGrid};
use crate::types::{GroundTruth, PredictionSet, QueryRun, RetrievalRun};

/// Fraction of sets containing their query's ground truth.
pub fn empirical_coverage(sets: &[PredictionSet], truth: &GroundTruth) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::InvalidArg("no prediction sets".into()));
    }
    let mut covered = 0usize;
    for set in sets {
        if set.contains(truth.require(&set.query_id)?) {
            covered += 1;
        }
    }
    Ok(covered as f64 / sets.len() as f64)
}

pub fn avg_group_size(sets: &[PredictionSet]) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::InvalidArg("no prediction sets".into()));
    }
    Ok(sets.iter().map(PredictionSet::len).sum::<usize>() as f64 / sets.len() as f64)
}

/// Seeded shuffle, then the first `round(n * cal_fraction)` ids calibrate
/// and the rest test. Input order does not matter.
pub fn split_queries(
    ids: &[String],
    seed: u64,
    cal_fraction: f64,
) -> Result<(Vec<String>, Vec<String>)> {
    if !(cal_fraction > 0.0 && cal_fraction < 1.0) {
        return Err(Error::InvalidArg(format!(
            "calibration fraction must lie in (0, 1), got {cal_fraction}"
        )));
    }
    let mut ids = ids.to_vec();
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_cal = ((ids.len() as f64) * cal_fraction).round() as usize;
    if n_cal == 0 || n_cal == ids.len() {
        return Err(Error::InvalidArg(format!(
            "cannot split {} queries into non-empty calibration and test sets",
            ids.len()
        )));
    }
    let test = ids.split_off(n_cal);
    Ok((ids, test))
}

/// Labeled queries present in the run, ascending.
pub fn labeled_queries(run: &RetrievalRun, truth: &GroundTruth) -> Vec<String> {
    run.query_ids()
        .filter(|q| truth.get(q).is_some())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub calibrator: Calibrator,
    pub sets: Vec<PredictionSet>,
    pub empirical_coverage: f64,
    pub avg_group_size: f64,
}

fn refined_queries(
    run: &RetrievalRun,
    ids: &[String],
    spec: TransformSpec,
) -> Result<Vec<QueryRun>> {
    ids.iter()
        .map(|q| {
            let raw = run.get(q).ok_or_else(|| Error::UnknownQuery(q.clone()))?;
            refine(raw, spec)
        })
        .collect()
}

/// Refine, calibrate on `cal_ids`, predict and score on `test_ids`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_split(
    run: &RetrievalRun,
    truth: &GroundTruth,
    cal_ids: &[String],
    test_ids: &[String],
    method: Method,
    spec: TransformSpec,
    alpha: f64,
    raps: RapsParams,
) -> Result<SplitOutcome> {
    let cal = refined_queries(run, cal_ids, spec)?;
    let cal_truth = cal_ids
        .iter()
        .map(|q| truth.require(q))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<_> = cal.iter().zip(cal_truth).collect();
    let calibrator = Calibrator::fit(method, alpha, spec, raps, &pairs, run.n_trunc())?;
    let sets = refined_queries(run, test_ids, spec)?
        .iter()
        .map(|q| calibrator.predict(q))
        .collect::<Result<Vec<_>>>()?;
    Ok(SplitOutcome {
        empirical_coverage: empirical_coverage(&sets, truth)?,
        avg_group_size: avg_group_size(&sets)?,
        calibrator,
        sets,
    })
}

/// A transform fixed up front, or a rank discount whose lambda is tuned on
/// the calibration split (`logrank:auto`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransformChoice {
    Fixed(TransformSpec),
    TunedLogRank,
}

impl fmt::Display for TransformChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformChoice::Fixed(spec) => spec.fmt(f),
            TransformChoice::TunedLogRank => f.write_str("logrank:auto"),
        }
    }
}

impl FromStr for TransformChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("logrank:auto") {
            Ok(TransformChoice::TunedLogRank)
        } else {
            s.parse().map(TransformChoice::Fixed)
        }
    }
}

impl From<TransformSpec> for TransformChoice {
    fn from(spec: TransformSpec) -> Self {
        TransformChoice::Fixed(spec)
    }
}

/// One benchmark cell: a calibrator paired with a transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setting {
    pub method: Method,
    pub transform: TransformChoice,
}

impl Setting {
    pub fn new(method: Method, transform: impl Into<TransformChoice>) -> Self {
        Setting {
            method,
            transform: transform.into(),
        }
    }

    /// Report label: `Baseline`, `Max Score`, `Z-Score` and `Ours` for the
    /// vanilla threshold; the calibrator name otherwise.
    pub fn label(&self) -> String {
        use TransformChoice::*;
        use TransformSpec::*;
        match (self.method, self.transform) {
            (Method::Vanilla, Fixed(Identity)) => "Baseline".into(),
            (Method::Vanilla, Fixed(MaxScore)) => "Max Score".into(),
            (Method::Vanilla, Fixed(ZScore)) => "Z-Score".into(),
            (Method::Vanilla, Fixed(LogRankDiscount { .. }) | TunedLogRank) => "Ours".into(),
            (m, Fixed(Identity)) => method_name(m).into(),
            (m, t) => format!("{} ({t})", method_name(m)),
        }
    }
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Vanilla => "Vanilla",
        Method::TopK => "TopK",
        Method::Aps => "APS",
        Method::Raps => "RAPS",
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}", self.method, self.transform)
    }
}

impl FromStr for Setting {
    type Err = Error;

    /// `method+transform`, e.g. `vanilla+logrank:0.03`.
    fn from_str(s: &str) -> Result<Self> {
        let (m, t) = s
            .split_once('+')
            .ok_or_else(|| Error::InvalidArg(format!("expected method+transform, got `{s}`")))?;
        Ok(Setting {
            method: m.parse()?,
            transform: t.parse()?,
        })
    }
}

/// Row order of the main comparison table: Baseline, APS, TopK, Ours.
pub fn comparison_settings() -> Vec<Setting> {
    vec![
        Setting::new(Method::Vanilla, TransformSpec::Identity),
        Setting::new(Method::Aps, TransformSpec::Identity),
        Setting::new(Method::TopK, TransformSpec::Identity),
        Setting::new(Method::Vanilla, TransformChoice::TunedLogRank),
    ]
}

/// Row order of the transform ablation: Baseline, Max Score, Z-Score, Ours.
pub fn ablation_settings() -> Vec<Setting> {
    vec![
        Setting::new(Method::Vanilla, TransformSpec::Identity),
        Setting::new(Method::Vanilla, TransformSpec::MaxScore),
        Setting::new(Method::Vanilla, TransformSpec::ZScore),
        Setting::new(Method::Vanilla, TransformChoice::TunedLogRank),
    ]
}

pub const DEFAULT_ALPHAS: [f64; 3] = [0.1, 0.05, 0.03];

#[derive(Debug, Clone, PartialEq)]
pub enum SplitMode {
    /// Seeded shuffle of the labeled queries, one split per seed.
    Random { cal_fraction: f64 },
    /// Explicit calibration/test query ids (seeds only affect tuning).
    Fixed { cal: Vec<String>, test: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub dataset: String,
    pub settings: Vec<Setting>,
    pub alphas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub split: SplitMode,
    pub raps: RapsParams,
    pub grid: LambdaGrid,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            dataset: "dataset".into(),
            settings: comparison_settings(),
            alphas: DEFAULT_ALPHAS.to_vec(),
            seeds: vec![0],
            split: SplitMode::Random { cal_fraction: 0.5 },
            raps: RapsParams::default(),
            grid: LambdaGrid::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub dataset: String,
    pub alpha: f64,
    /// Display label (`Baseline`, `Ours`, ...).
    pub method: String,
    pub calibrator: Method,
    pub transform: String,
    /// Mean lambda actually used, for rank-discount settings.
    pub lambda: Option<f64>,
    pub empirical_coverage: f64,
    pub avg_group_size: f64,
    pub n_test: usize,
    pub n_seeds: usize,
    /// Population standard deviations across seeds (zero for one seed).
    pub coverage_std: f64,
    pub size_std: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

/// Outcome of one (seed, alpha, setting) evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellOutcome {
    pub empirical_coverage: f64,
    pub avg_group_size: f64,
    pub n_test: usize,
    pub lambda: Option<f64>,
}

/// Evaluates one setting on a given split. A tuned rank discount picks its
/// lambda on a seeded half/half split of `cal_ids`, then calibrates on all
/// of `cal_ids`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_setting(
    run: &RetrievalRun,
    truth: &GroundTruth,
    cal_ids: &[String],
    test_ids: &[String],
    setting: Setting,
    alpha: f64,
    raps: RapsParams,
    grid: &LambdaGrid,
    seed: u64,
) -> Result<CellOutcome> {
    let spec = match setting.transform {
        TransformChoice::Fixed(spec) => spec,
        TransformChoice::TunedLogRank => {
            let (tune_cal, tune_val) = split_queries(cal_ids, seed ^ 0x5eed_1a4b, 0.5)?;
            let tuned = tune_lambda(run, truth, &tune_cal, &tune_val, alpha, grid)?;
            TransformSpec::log_rank(tuned.best_lambda)?
        }
    };
    let out = evaluate_split(
        run,
        truth,
        cal_ids,
        test_ids,
        setting.method,
        spec,
        alpha,
        raps,
    )?;
    Ok(CellOutcome {
        empirical_coverage: out.empirical_coverage,
        avg_group_size: out.avg_group_size,
        n_test: test_ids.len(),
        lambda: match spec {
            TransformSpec::LogRankDiscount { lambda } => Some(lambda),
            _ => None,
        },
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs every (alpha, setting) cell over every seed. Rows come out ordered
/// by alpha, then setting, in the order given.
pub fn run_benchmark(
    run: &RetrievalRun,
    truth: &GroundTruth,
    cfg: &BenchConfig,
) -> Result<EvalReport> {
    if cfg.settings.is_empty() || cfg.alphas.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::InvalidArg(
            "benchmark needs at least one setting, alpha and seed".into(),
        ));
    }
    for &alpha in &cfg.alphas {
        validate_alpha(alpha)?;
    }
    let splits: Vec<(Vec<String>, Vec<String>)> = match &cfg.split {
        SplitMode::Random { cal_fraction } => {
            let ids = labeled_queries(run, truth);
            cfg.seeds
                .iter()
                .map(|&s| split_queries(&ids, s, *cal_fraction))
                .collect::<Result<_>>()?
        }
        SplitMode::Fixed { cal, test } => {
            if cal.iter().any(|c| test.contains(c)) {
                return Err(Error::InvalidArg(
                    "calibration and test splits overlap".into(),
                ));
            }
            vec![(cal.clone(), test.clone()); cfg.seeds.len()]
        }
    };

    let cells: Vec<(usize, usize, usize)> = (0..cfg.alphas.len())
        .flat_map(|a| {
            (0..cfg.settings.len()).flat_map(move |s| (0..cfg.seeds.len()).map(move |k| (a, s, k)))
        })
        .collect();
    let outcomes = cells
        .par_iter()
        .map(|&(a, s, k)| {
            let (cal, test) = &splits[k];
            evaluate_setting(
                run,
                truth,
                cal,
                test,
                cfg.settings[s],
                cfg.alphas[a],
                cfg.raps,
                &cfg.grid,
                cfg.seeds[k],
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let rows = outcomes
        .chunks(cfg.seeds.len())
        .zip(cells.chunks(cfg.seeds.len()))
        .map(|(per_seed, cell)| {
            let (a, s, _) = cell[0];
            let setting = cfg.settings[s];
            let cov: Vec<f64> = per_seed.iter().map(|o| o.empirical_coverage).collect();
            let size: Vec<f64> = per_seed.iter().map(|o| o.avg_group_size).collect();
            let lambdas: Vec<f64> = per_seed.iter().filter_map(|o| o.lambda).collect();
            let (coverage, coverage_std) = mean_std(&cov);
            let (avg_size, size_std) = mean_std(&size);
            EvalRow {
                dataset: cfg.dataset.clone(),
                alpha: cfg.alphas[a],
                method: setting.label(),
                calibrator: setting.method,
                transform: setting.transform.to_string(),
                lambda: (!lambdas.is_empty()).then(|| mean_std(&lambdas).0),
                empirical_coverage: coverage,
                avg_group_size: avg_size,
                n_test: per_seed[0].n_test,
                n_seeds: per_seed.len(),
                coverage_std,
                size_std,
            }
        })
        .collect();
    Ok(EvalReport { rows })
}

impl EvalReport {
    fn multi_seed(&self) -> bool {
        self.rows.iter().any(|r| r.n_seeds > 1)
    }

    /// CSV with one row per cell. Standard-deviation columns are added when
    /// any cell averages more than one seed.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let multi = self.multi_seed();
        write!(
            w,
            "dataset,alpha,method,calibrator,transform,lambda,empirical_coverage,avg_group_size,n_test"
        )?;
        if multi {
            write!(w, ",n_seeds,coverage_std,avg_group_size_std")?;
        }
        writeln!(w)?;
        for r in &self.rows {
            let lambda = r.lambda.map(|l| l.to_string()).unwrap_or_default();
            write!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.dataset,
                r.alpha,
                r.method,
                r.calibrator,
                r.transform,
                lambda,
                r.empirical_coverage,
                r.avg_group_size,
                r.n_test
            )?;
            if multi {
                write!(w, ",{},{},{}", r.n_seeds, r.coverage_std, r.size_std)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Markdown table with columns `Dataset, α, Method, Emp. Cov.,
    /// Avg. Grp. Size`. Repeated dataset and α cells are left blank.
    pub fn write_markdown(&self, mut w: impl Write) -> std::io::Result<()> {
        let multi = self.multi_seed();
        writeln!(w, "| Dataset | α | Method | Emp. Cov. | Avg. Grp. Size |")?;
        writeln!(w, "|---|---|---|---|---|")?;
        let mut prev: Option<(&str, f64)> = None;
        for r in &self.rows {
            let dataset = match prev {
                Some((d, _)) if d == r.dataset => "",
                _ => r.dataset.as_str(),
            };
            let alpha = match prev {
                Some((d, a)) if d == r.dataset && a == r.alpha => String::new(),
                _ => r.alpha.to_string(),
            };
            let (cov, size) = if multi {
                (
                    format!("{:.2} ± {:.2}", r.empirical_coverage, r.coverage_std),
                    format!("{:.2} ± {:.2}", r.avg_group_size, r.size_std),
                )
            } else {
                (
                    format!("{:.2}", r.empirical_coverage),
                    format!("{:.2}", r.avg_group_size),
                )
            };
            writeln!(w, "| {dataset} | {alpha} | {} | {cov} | {size} |", r.method)?;
            prev = Some((&r.dataset, r.alpha));
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        save_with(path.as_ref(), |w| self.write_csv(w))
    }

    pub fn save_markdown(&self, path: impl AsRef<Path>) -> Result<()> {
        save_with(path.as_ref(), |w| self.write_markdown(w))
    }
}

fn save_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
