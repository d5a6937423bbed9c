//! One-axis hyperparameter sweeps over the exploration settings.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use super::run::{csv_writer, flush, run_training, write_row, RunOutcome};
use crate::agent::TrainConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Beta,
    SampleRange,
    SampleCount,
}

impl SweepAxis {
    pub fn apply(self, config: &mut TrainConfig, value: f64) -> Result<()> {
        let ex = &mut config.exploration;
        match self {
            SweepAxis::Beta => ex.beta = ex.beta.with_base(value),
            SweepAxis::SampleRange => ex.sample_range = value,
            SweepAxis::SampleCount => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::Config(format!(
                        "sample_count must be a positive integer, got {value}"
                    )));
                }
                ex.sample_count = value as usize;
            }
        }
        Ok(())
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Beta => "beta",
            SweepAxis::SampleRange => "sample_range",
            SweepAxis::SampleCount => "sample_count",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(SweepAxis::Beta),
            "sample_range" | "s_r" => Ok(SweepAxis::SampleRange),
            "sample_count" | "s_n" => Ok(SweepAxis::SampleCount),
            other => Err(Error::Config(format!(
                "unknown sweep axis `{other}` (expected beta, sample_range or sample_count)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: TrainConfig,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub runs: usize,
    pub failures: usize,
    pub mean_final_eval: f64,
    /// Sample standard deviation; zero for a single run.
    pub std_final_eval: f64,
    pub mean_wall_seconds: f64,
}

pub const AGGREGATE_HEADER: [&str; 7] = [
    "axis",
    "value",
    "runs",
    "failures",
    "mean_final_eval",
    "std_final_eval",
    "mean_wall_seconds",
];

#[derive(Debug)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub rows: Vec<AggregateRow>,
    /// `(value, seed, message)` for every failed child run.
    pub failures: Vec<(f64, u64, String)>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every `(value, seed)` pair under `root/sweep-<axis>/` on at most
/// `workers` threads and writes `aggregate.csv` there. Failed children are
/// counted and the sweep carries on.
pub fn run_sweep(spec: &SweepSpec, root: &Path) -> Result<SweepOutcome> {
    if spec.values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    if spec.seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    let mut jobs = Vec::new();
    for &value in &spec.values {
        for &seed in &spec.seeds {
            let mut c = spec.base.clone();
            spec.axis.apply(&mut c, value)?;
            c.seed = seed;
            c.validate()?;
            jobs.push((value, seed, c));
        }
    }
    let dir = root.join(format!("sweep-{}", spec.axis));
    fs::create_dir_all(&dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<(f64, u64, Result<RunOutcome>)> = pool.install(|| {
        jobs.into_par_iter()
            .map(|(value, seed, c)| {
                let child = dir.join(format!("{}={value:?}", spec.axis));
                (value, seed, run_training(c, &child, false))
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &value in &spec.values {
        let mut finals = Vec::new();
        let mut walls = Vec::new();
        let mut failed = 0;
        for (v, seed, r) in &results {
            if *v != value {
                continue;
            }
            match r {
                Ok(out) => match out.final_eval_return() {
                    Some(f) => {
                        finals.push(f);
                        walls.push(out.wall_seconds());
                    }
                    None => {
                        failed += 1;
                        failures.push((value, *seed, "run produced no epochs".to_string()));
                    }
                },
                Err(e) => {
                    failed += 1;
                    failures.push((value, *seed, e.to_string()));
                }
            }
        }
        let (mean_final_eval, std_final_eval) = mean_std(&finals);
        rows.push(AggregateRow {
            axis: spec.axis,
            value,
            runs: finals.len() + failed,
            failures: failed,
            mean_final_eval,
            std_final_eval,
            mean_wall_seconds: mean_std(&walls).0,
        });
    }
    let mut w = csv_writer(&dir.join("aggregate.csv"))?;
    write_row(&mut w, AGGREGATE_HEADER)?;
    for r in &rows {
        write_row(
            &mut w,
            [
                r.axis.to_string(),
                format!("{:?}", r.value),
                r.runs.to_string(),
                r.failures.to_string(),
                format!("{:?}", r.mean_final_eval),
                format!("{:?}", r.std_final_eval),
                format!("{:?}", r.mean_wall_seconds),
            ],
        )?;
    }
    flush(&mut w)?;
    for (value, seed, msg) in &failures {
        log::warn!("sweep child {}={value} seed {seed} failed: {msg}", spec.axis);
    }
    Ok(SweepOutcome { dir, rows, failures })
}
