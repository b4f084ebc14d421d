//! Subcommand implementations for the `rankcp` binary.
//!
//! Every command reads and writes files; stdout only carries short
//! human-readable summaries.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rankcp::data::{self, Qrels};
use rankcp::eval::{self, ablation_settings, comparison_settings, labeled_queries, split_queries};
use rankcp::retrieval::{self, EmbeddingMatrix};
use rankcp::types::DEFAULT_N_TRUNC;
use rankcp::{
    refine, tune_lambda, BenchConfig, Calibrator, Cutoff, EvalReport, EvalRow, GroundTruth,
    LambdaGrid, Method, RapsParams, RetrievalRun, Setting, SplitMode, SynthConfig, TransformChoice,
    TransformSpec, TruthRank,
};

/// Bad flags or flag combinations. Maps to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

/// Exit code for an error: 1 usage, 2 data, 3 internal invariant.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<clap::Error>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<rankcp::Error>() {
            return if e.is_usage_error() {
                EXIT_USAGE
            } else if e.is_data_error() || matches!(e, rankcp::Error::TransformMismatch { .. }) {
                EXIT_DATA
            } else {
                EXIT_INTERNAL
            };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_DATA;
        }
    }
    EXIT_INTERNAL
}

#[derive(Debug, Parser)]
#[command(
    name = "rankcp",
    version,
    about = "Conformal prediction sets for retrieval runs"
)]
#[command(args_override_self = true)]
pub struct Cli {
    /// TOML file of `key = value` defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact top-n cosine retrieval over embedding files.
    Retrieve(RetrieveArgs),
    /// Fit a conformal calibrator and write it as JSON.
    Calibrate(CalibrateArgs),
    /// Apply a calibrator and report coverage and set size.
    Evaluate(EvaluateArgs),
    /// Grid-search the rank-discount lambda.
    Tune(TuneArgs),
    /// Generate a synthetic run and qrels.
    Synth(SynthArgs),
    /// Sweep methods, transforms and alphas over seeded splits.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct RunInput {
    /// Run file (`query<TAB>doc<TAB>score`).
    #[arg(long)]
    pub run: PathBuf,
    /// Qrels file (`query<TAB>doc<TAB>grade`).
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long, default_value_t = DEFAULT_N_TRUNC)]
    pub n_trunc: usize,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    /// Candidates kept per query.
    #[arg(long, alias = "n-trunc", default_value_t = DEFAULT_N_TRUNC)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub input: RunInput,
    #[arg(long, default_value = "vanilla")]
    pub method: Method,
    #[arg(long, default_value = "identity")]
    pub transform: TransformSpec,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 5)]
    pub raps_k_reg: usize,
    #[arg(long, default_value_t = 0.01)]
    pub raps_lambda_reg: f64,
    /// Calibration query ids, one per line (default: every labeled query).
    #[arg(long, value_name = "FILE")]
    pub query_ids: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub input: RunInput,
    #[arg(long)]
    pub calibrator: PathBuf,
    /// Test query ids, one per line (default: every labeled query).
    #[arg(long, value_name = "FILE")]
    pub query_ids: Option<PathBuf>,
    #[arg(long, default_value = "dataset")]
    pub dataset: String,
    /// Report CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a Markdown table here.
    #[arg(long)]
    pub markdown: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub input: RunInput,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// `start:stop:step` or a comma list.
    #[arg(long, default_value = "0:0.99:0.03")]
    pub grid: LambdaGrid,
    /// Seed for the calibration/validation split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub cal_fraction: f64,
    #[arg(long, value_name = "FILE", requires = "val_queries")]
    pub cal_queries: Option<PathBuf>,
    #[arg(long, value_name = "FILE", requires = "cal_queries")]
    pub val_queries: Option<PathBuf>,
    /// Curve CSV (`lambda,avg_group_size,empirical_coverage`).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub n_queries: usize,
    #[arg(long, default_value_t = 200)]
    pub n_candidates: usize,
    #[arg(long, default_value_t = 1.0)]
    pub scale_spread: f64,
    /// `geometric:<p>` or `uniform:<max_rank>`.
    #[arg(long, default_value = "geometric:0.3", value_parser = parse_truth_rank)]
    pub truth_rank: TruthRank,
    #[arg(long, default_value_t = 0.02)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_N_TRUNC)]
    pub n_trunc: usize,
    /// Output directory; receives `run.tsv` and `qrels.tsv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Run file; repeat together with `--qrels` and `--dataset` to put
    /// several datasets in one table.
    #[arg(long, required = true)]
    pub run: Vec<PathBuf>,
    #[arg(long, required = true)]
    pub qrels: Vec<PathBuf>,
    /// Dataset name per `--run` (default: the run file's stem).
    #[arg(long)]
    pub dataset: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_N_TRUNC)]
    pub n_trunc: usize,
    /// `comparison` (Baseline, APS, TopK, Ours) or `ablation`
    /// (Baseline, Max Score, Z-Score, Ours).
    #[arg(long, conflicts_with_all = ["settings", "method"])]
    pub preset: Option<Preset>,
    /// Explicit cells, e.g. `vanilla+identity,aps+identity`.
    #[arg(long, value_delimiter = ',', conflicts_with = "method")]
    pub settings: Vec<Setting>,
    /// Methods crossed with `--transform`.
    #[arg(long, value_delimiter = ',')]
    pub method: Vec<Method>,
    #[arg(long, value_delimiter = ',', default_value = "identity")]
    pub transform: Vec<TransformChoice>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.03")]
    pub alpha: Vec<f64>,
    /// First split seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of seeds to average (seed, seed + 1, ...).
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0.5)]
    pub cal_fraction: f64,
    #[arg(long, value_name = "FILE", requires = "test_queries")]
    pub cal_queries: Option<PathBuf>,
    #[arg(long, value_name = "FILE", requires = "cal_queries")]
    pub test_queries: Option<PathBuf>,
    #[arg(long, default_value = "0:0.99:0.03")]
    pub grid: LambdaGrid,
    #[arg(long, default_value_t = 5)]
    pub raps_k_reg: usize,
    #[arg(long, default_value_t = 0.01)]
    pub raps_lambda_reg: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub markdown: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    Comparison,
    Ablation,
}

pub fn parse_truth_rank(s: &str) -> std::result::Result<TruthRank, String> {
    let (kind, value) = s
        .split_once(':')
        .ok_or_else(|| format!("expected geometric:<p> or uniform:<max_rank>, got `{s}`"))?;
    match kind {
        "geometric" => value
            .parse()
            .map(|p| TruthRank::Geometric { p })
            .map_err(|e| format!("bad p: {e}")),
        "uniform" => value
            .parse()
            .map(|max_rank| TruthRank::Uniform { max_rank })
            .map_err(|e| format!("bad max_rank: {e}")),
        _ => Err(format!("unknown truth-rank distribution `{kind}`")),
    }
}

/// Expands `--config FILE` into flags placed right after the subcommand
/// name, so explicit command-line flags still win.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut config = None;
    let mut rest = Vec::with_capacity(args.len());
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let s = arg.to_string_lossy();
        if s == "--config" {
            let path = iter.next().ok_or_else(|| usage("--config needs a file"))?;
            config = Some(PathBuf::from(path));
        } else if let Some(path) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(path));
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let text =
        fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let given: Vec<String> = rest
        .iter()
        .filter_map(|a| {
            let s = a.to_string_lossy();
            s.starts_with("--")
                .then(|| s.split('=').next().unwrap_or_default().to_string())
        })
        .collect();
    let mut flags = Vec::new();
    for (key, value) in table {
        let flag = format!("--{}", key.replace('_', "-"));
        // List-valued flags append rather than override, so drop config
        // keys the command line already sets.
        if given.contains(&flag) {
            continue;
        }
        let value = match value {
            toml::Value::Boolean(true) => {
                flags.push(flag.into());
                continue;
            }
            toml::Value::Boolean(false) => continue,
            toml::Value::String(s) => s,
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Array(items) => items
                .iter()
                .map(|v| match v {
                    toml::Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(","),
            other => bail!(usage(format!(
                "unsupported config value for `{key}`: {other}"
            ))),
        };
        flags.push(flag.into());
        flags.push(value.into());
    }
    // argv[0], subcommand, then config flags, then the user's flags.
    let split = rest
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map_or(rest.len(), |i| i + 2);
    let mut out: Vec<OsString> = rest[..split].to_vec();
    out.extend(flags);
    out.extend_from_slice(&rest[split..]);
    Ok(out)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Retrieve(a) => cmd_retrieve(&a),
        Command::Calibrate(a) => cmd_calibrate(&a).map(drop),
        Command::Evaluate(a) => cmd_evaluate(&a).map(drop),
        Command::Tune(a) => cmd_tune(&a).map(drop),
        Command::Synth(a) => cmd_synth(&a),
        Command::Bench(a) => {
            let report = cmd_bench(&a)?;
            report.write_markdown(std::io::stdout().lock())?;
            Ok(())
        }
    }
}

fn load_inputs(input: &RunInput) -> Result<(RetrievalRun, GroundTruth)> {
    if input.n_trunc == 0 {
        bail!(usage("--n-trunc must be at least 1"));
    }
    let run = data::load_run(&input.run, input.n_trunc)?;
    let qrels = data::load_qrels(&input.qrels)?;
    let truth = data::reduce_qrels(&qrels, &run)?;
    let misses = truth.iter().filter(|(q, _)| truth.is_miss(q)).count();
    if misses > 0 {
        eprintln!(
            "note: {misses} of {} labeled queries have no relevant document in the run",
            truth.len()
        );
    }
    Ok((run, truth))
}

/// Reads one query id per line; blank lines and `#` comments are skipped.
pub fn read_query_ids(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

pub fn write_query_ids(path: &Path, ids: &[String]) -> Result<()> {
    let mut text = ids.join("\n");
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn select_queries(
    run: &RetrievalRun,
    truth: &GroundTruth,
    file: Option<&Path>,
) -> Result<Vec<String>> {
    match file {
        None => Ok(labeled_queries(run, truth)),
        Some(path) => {
            let ids = read_query_ids(path)?;
            for q in &ids {
                if run.get(q).is_none() {
                    return Err(rankcp::Error::UnknownQuery(q.clone()).into());
                }
                truth.require(q)?;
            }
            Ok(ids)
        }
    }
}

pub fn cmd_retrieve(a: &RetrieveArgs) -> Result<()> {
    if a.n == 0 {
        bail!(usage("--n must be at least 1"));
    }
    let corpus = EmbeddingMatrix::load(&a.corpus)?.normalize()?;
    let queries = EmbeddingMatrix::load(&a.queries)?;
    let results = retrieval::search_all(&queries, &corpus, a.n)?;
    let mut run = RetrievalRun::new(a.n)?;
    for q in results {
        run.insert(q)?;
    }
    data::write_run(&a.out, &run)?;
    println!(
        "retrieved top {} of {} documents for {} queries -> {}",
        a.n.min(corpus.len()),
        corpus.len(),
        run.len(),
        a.out.display()
    );
    Ok(())
}

pub fn cmd_calibrate(a: &CalibrateArgs) -> Result<Calibrator> {
    let (run, truth) = load_inputs(&a.input)?;
    let ids = select_queries(&run, &truth, a.query_ids.as_deref())?;
    let refined = ids
        .iter()
        .map(|q| refine(run.get(q).expect("checked"), a.transform))
        .collect::<rankcp::Result<Vec<_>>>()?;
    let pairs = refined
        .iter()
        .zip(&ids)
        .map(|(r, q)| Ok((r, truth.require(q)?)))
        .collect::<rankcp::Result<Vec<_>>>()?;
    let raps = RapsParams {
        k_reg: a.raps_k_reg,
        lambda_reg: a.raps_lambda_reg,
    };
    let cal = Calibrator::fit(a.method, a.alpha, a.transform, raps, &pairs, run.n_trunc())?;
    cal.save(&a.out)?;
    match cal.cutoff {
        Cutoff::Size(k) => println!("k = {k} (n = {})", cal.n_calibration),
        Cutoff::Threshold(t) => {
            println!("tau = {t} (n = {})", cal.n_calibration);
            if t.is_infinite() {
                eprintln!(
                    "warning: ceil((n + 1)(1 - alpha)) exceeds n or hits a retrieval miss; \
                     prediction sets will contain every retrieved candidate"
                );
            }
        }
    }
    Ok(cal)
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<EvalReport> {
    let (run, truth) = load_inputs(&a.input)?;
    let cal = Calibrator::load(&a.calibrator)?;
    let ids = select_queries(&run, &truth, a.query_ids.as_deref())?;
    let sets = ids
        .iter()
        .map(|q| cal.predict(&refine(run.get(q).expect("checked"), cal.transform)?))
        .collect::<rankcp::Result<Vec<_>>>()?;
    let coverage = eval::empirical_coverage(&sets, &truth)?;
    let size = eval::avg_group_size(&sets)?;
    let setting = Setting::new(cal.method, cal.transform);
    let report = EvalReport {
        rows: vec![EvalRow {
            dataset: a.dataset.clone(),
            alpha: cal.alpha,
            method: setting.label(),
            calibrator: cal.method,
            transform: cal.transform.to_string(),
            lambda: match cal.transform {
                TransformSpec::LogRankDiscount { lambda } => Some(lambda),
                _ => None,
            },
            empirical_coverage: coverage,
            avg_group_size: size,
            n_test: sets.len(),
            n_seeds: 1,
            coverage_std: 0.0,
            size_std: 0.0,
        }],
    };
    report.save_csv(&a.out)?;
    if let Some(md) = &a.markdown {
        report.save_markdown(md)?;
    }
    println!(
        "coverage = {coverage:.4}, avg group size = {size:.2} over {} queries",
        sets.len()
    );
    Ok(report)
}

pub fn cmd_tune(a: &TuneArgs) -> Result<rankcp::TuneResult> {
    let (run, truth) = load_inputs(&a.input)?;
    let (cal, val) = match (&a.cal_queries, &a.val_queries) {
        (Some(c), Some(v)) => (
            select_queries(&run, &truth, Some(c))?,
            select_queries(&run, &truth, Some(v))?,
        ),
        _ => split_queries(&labeled_queries(&run, &truth), a.seed, a.cal_fraction)?,
    };
    let result = tune_lambda(&run, &truth, &cal, &val, a.alpha, &a.grid)?;
    result.save_csv(&a.out)?;
    let best = result
        .curve
        .iter()
        .find(|p| p.lambda == result.best_lambda)
        .expect("best lambda is on the curve");
    println!(
        "best lambda = {} (avg group size {:.2}, coverage {:.4})",
        result.best_lambda, best.avg_group_size, best.empirical_coverage
    );
    Ok(result)
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_queries: a.n_queries,
        n_candidates: a.n_candidates,
        scale_spread: a.scale_spread,
        truth_rank: a.truth_rank,
        noise_sigma: a.noise_sigma,
        seed: a.seed,
        n_trunc: a.n_trunc,
    };
    let (run, truth) = rankcp::generate_synthetic(&cfg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    data::write_run(a.out.join("run.tsv"), &run)?;
    data::write_qrels(a.out.join("qrels.tsv"), &Qrels::from_ground_truth(&truth))?;
    println!(
        "wrote {} queries x {} candidates to {}",
        run.len(),
        a.n_candidates,
        a.out.display()
    );
    Ok(())
}

pub fn bench_settings(a: &BenchArgs) -> Result<Vec<Setting>> {
    Ok(match a.preset {
        Some(Preset::Comparison) => comparison_settings(),
        Some(Preset::Ablation) => ablation_settings(),
        None if !a.settings.is_empty() => a.settings.clone(),
        None if !a.method.is_empty() => a
            .method
            .iter()
            .flat_map(|&m| a.transform.iter().map(move |&t| Setting::new(m, t)))
            .collect(),
        None => comparison_settings(),
    })
}

pub fn cmd_bench(a: &BenchArgs) -> Result<EvalReport> {
    if a.seeds == 0 {
        bail!(usage("--seeds must be at least 1"));
    }
    if a.run.len() != a.qrels.len() {
        bail!(usage(
            "--run and --qrels must be given the same number of times"
        ));
    }
    if !a.dataset.is_empty() && a.dataset.len() != a.run.len() {
        bail!(usage("give one --dataset per --run, or none"));
    }
    if a.cal_queries.is_some() && a.run.len() > 1 {
        bail!(usage("--cal-queries/--test-queries need a single --run"));
    }
    let settings = bench_settings(a)?;
    let mut report = EvalReport::default();
    for (i, (run_path, qrels_path)) in a.run.iter().zip(&a.qrels).enumerate() {
        let dataset = match a.dataset.get(i) {
            Some(name) => name.clone(),
            None => dataset_name(run_path),
        };
        let (run, truth) = load_inputs(&RunInput {
            run: run_path.clone(),
            qrels: qrels_path.clone(),
            n_trunc: a.n_trunc,
        })?;
        let split = match (&a.cal_queries, &a.test_queries) {
            (Some(c), Some(t)) => SplitMode::Fixed {
                cal: select_queries(&run, &truth, Some(c))?,
                test: select_queries(&run, &truth, Some(t))?,
            },
            _ => SplitMode::Random {
                cal_fraction: a.cal_fraction,
            },
        };
        let cfg = BenchConfig {
            dataset,
            settings: settings.clone(),
            alphas: a.alpha.clone(),
            seeds: (a.seed..a.seed + a.seeds).collect(),
            split,
            raps: RapsParams {
                k_reg: a.raps_k_reg,
                lambda_reg: a.raps_lambda_reg,
            },
            grid: a.grid.clone(),
        };
        report
            .rows
            .extend(eval::run_benchmark(&run, &truth, &cfg)?.rows);
    }
    report.save_csv(&a.out)?;
    if let Some(md) = &a.markdown {
        report.save_markdown(md)?;
    }
    Ok(report)
}

/// File name up to the first dot, upper-cased (`fever.run.tsv` -> `FEVER`).
fn dataset_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy())
        .and_then(|n| n.split('.').next().map(str::to_uppercase))
        .filter(|n| !n.is_empty())
        .unwrap_or_else(|| "dataset".to_string())
}
