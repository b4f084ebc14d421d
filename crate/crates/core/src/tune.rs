//! Grid search for the rank-discount exponent.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::conformal::{Method, RapsParams};
use crate::error::{Error, Result};
use crate::eval::evaluate_split;
use crate::refine::TransformSpec;
use crate::types::{GroundTruth, RetrievalRun};

/// Strictly increasing lambda values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaGrid(Vec<f64>);

impl LambdaGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArg("lambda grid is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArg(format!("lambda {v} outside [0, 1]")));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArg(
                "lambda grid must be strictly increasing".into(),
            ));
        }
        Ok(LambdaGrid(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl Default for LambdaGrid {
    /// 0.00, 0.03, ..., 0.99.
    fn default() -> Self {
        LambdaGrid((0..=33).map(|i| f64::from(i * 3) / 100.0).collect())
    }
}

impl FromStr for LambdaGrid {
    type Err = Error;

    /// Either `start:stop:step` (inclusive of `stop`) or a comma list.
    fn from_str(s: &str) -> Result<Self> {
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArg(format!("bad number `{t}` in grid `{s}`")))
        };
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            [start, stop, step] => {
                let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
                if step.is_nan() || step <= 0.0 {
                    return Err(Error::InvalidArg("grid step must be positive".into()));
                }
                let count = ((stop - start) / step + 1e-9).floor();
                if count < 0.0 {
                    return Err(Error::InvalidArg("grid stop is below start".into()));
                }
                // Round to 12 decimals so 0.03 * 19 prints as 0.57.
                let values = (0..=count as usize)
                    .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
                    .collect();
                LambdaGrid::new(values)
            }
            [_] => LambdaGrid::new(s.split(',').map(num).collect::<Result<_>>()?),
            _ => Err(Error::InvalidArg(format!("cannot parse grid `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub lambda: f64,
    pub avg_group_size: f64,
    pub empirical_coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub best_lambda: f64,
    pub curve: Vec<CurvePoint>,
}

impl TuneResult {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "lambda,avg_group_size,empirical_coverage")?;
        for p in &self.curve {
            writeln!(
                w,
                "{},{},{}",
                p.lambda, p.avg_group_size, p.empirical_coverage
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// For each lambda: refine both splits with the rank discount, calibrate a
/// vanilla threshold on `cal_ids` and measure set size on `val_ids`. The
/// smallest average size wins; ties go to the smaller lambda.
pub fn tune_lambda(
    run: &RetrievalRun,
    truth: &GroundTruth,
    cal_ids: &[String],
    val_ids: &[String],
    alpha: f64,
    grid: &LambdaGrid,
) -> Result<TuneResult> {
    if cal_ids.iter().any(|c| val_ids.contains(c)) {
        return Err(Error::InvalidArg(
            "calibration and validation splits overlap".into(),
        ));
    }
    let curve = grid
        .values()
        .par_iter()
        .map(|&lambda| {
            let outcome = evaluate_split(
                run,
                truth,
                cal_ids,
                val_ids,
                Method::Vanilla,
                TransformSpec::log_rank(lambda)?,
                alpha,
                RapsParams::default(),
            )?;
            Ok(CurvePoint {
                lambda,
                avg_group_size: outcome.avg_group_size,
                empirical_coverage: outcome.empirical_coverage,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    // Ties keep the earlier, smaller lambda.
    let best = curve
        .iter()
        .fold(None::<&CurvePoint>, |best, p| match best {
            Some(b) if b.avg_group_size <= p.avg_group_size => Some(b),
            _ => Some(p),
        })
        .expect("grid is non-empty");
    Ok(TuneResult {
        best_lambda: best.lambda,
        curve,
    })
}
