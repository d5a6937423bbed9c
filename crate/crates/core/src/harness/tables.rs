//! Tabular convergence battery and softmax bound tables.

use std::fs;
use std::path::Path;

use rand::Rng;

use super::run::{csv_writer, flush, write_row};
use crate::error::{Error, Result};
use crate::math_ops::{bound_table, BoundRow};
use crate::rng::seeded;
use crate::schedule::BetaSchedule;
use crate::tabular::{gdq_value_iteration, GdqTrace, QTablePair, RefreshRule, TabularMdp};

pub const TRACE_HEADER: [&str; 5] = ["iteration", "beta_t", "sup_norm_to_qstar", "max_q1", "max_q2"];

pub const BATTERY_HEADER: [&str; 7] = [
    "mdp",
    "seed",
    "n_states",
    "n_actions",
    "final_distance",
    "first_within_tol",
    "converged",
];

pub const BOUND_HEADER: [&str; 6] = ["n", "beta", "lse", "sm", "entropy_term", "maximum"];

#[derive(Debug, Clone, PartialEq)]
pub struct BatterySpec {
    pub mdps: usize,
    pub max_states: usize,
    pub max_actions: usize,
    pub gamma: f64,
    pub schedule: BetaSchedule,
    pub iterations: usize,
    pub tol: f64,
    pub seed: u64,
    pub rule: RefreshRule,
}

impl Default for BatterySpec {
    fn default() -> Self {
        Self {
            mdps: 20,
            max_states: 6,
            max_actions: 4,
            gamma: 0.9,
            schedule: BetaSchedule::Linear { base: 1.0 },
            iterations: 10_000,
            tol: 1e-3,
            seed: 0,
            rule: RefreshRule::Alternate,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatteryEntry {
    pub seed: u64,
    pub mdp: TabularMdp,
    pub trace: GdqTrace,
    /// First iteration whose distance to `Q*` is within tolerance.
    pub first_within_tol: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct BatteryReport {
    pub spec: BatterySpec,
    pub entries: Vec<BatteryEntry>,
}

impl BatteryReport {
    /// Largest final distance to `Q*` over the battery.
    pub fn max_final_distance(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.trace.final_distance())
            .fold(0.0, f64::max)
    }

    pub fn all_converged(&self) -> bool {
        self.entries.iter().all(|e| e.trace.final_distance() <= self.spec.tol)
    }
}

/// MDP `i` of the battery uses seed `spec.seed + i`; sizes are drawn from
/// `2..=max_states` and `2..=max_actions`, and both tables start uniform in
/// the reward-scaled value range.
pub fn run_battery(spec: &BatterySpec) -> Result<BatteryReport> {
    if spec.max_states < 2 || spec.max_actions < 2 || spec.mdps == 0 {
        return Err(Error::Config(
            "battery needs mdps >= 1 and at least 2 states and actions".into(),
        ));
    }
    let mut entries = Vec::with_capacity(spec.mdps);
    for i in 0..spec.mdps {
        let seed = spec.seed + i as u64;
        let mut rng = seeded(seed);
        let ns = rng.random_range(2..=spec.max_states);
        let na = rng.random_range(2..=spec.max_actions);
        let mdp = TabularMdp::random(ns, na, spec.gamma, &mut rng)?;
        let init = QTablePair::random(&mdp, &mut rng);
        let trace = gdq_value_iteration(&mdp, &spec.schedule, spec.iterations, init, spec.rule)?;
        let first_within_tol = trace
            .rows
            .iter()
            .find(|r| r.sup_norm_to_qstar <= spec.tol)
            .map(|r| r.iteration);
        entries.push(BatteryEntry {
            seed,
            mdp,
            trace,
            first_within_tol,
        });
    }
    Ok(BatteryReport {
        spec: spec.clone(),
        entries,
    })
}

/// Writes `trace_<i>.csv` per MDP and `summary.csv` under `dir`.
pub fn write_battery(report: &BatteryReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut summary = csv_writer(&dir.join("summary.csv"))?;
    write_row(&mut summary, BATTERY_HEADER)?;
    for (i, e) in report.entries.iter().enumerate() {
        let mut w = csv_writer(&dir.join(format!("trace_{i:02}.csv")))?;
        write_row(&mut w, TRACE_HEADER)?;
        for r in &e.trace.rows {
            write_row(
                &mut w,
                [
                    r.iteration.to_string(),
                    format!("{:?}", r.beta_t),
                    format!("{:?}", r.sup_norm_to_qstar),
                    format!("{:?}", r.max_q1),
                    format!("{:?}", r.max_q2),
                ],
            )?;
        }
        flush(&mut w)?;
        write_row(
            &mut summary,
            [
                i.to_string(),
                e.seed.to_string(),
                e.mdp.n_states().to_string(),
                e.mdp.n_actions().to_string(),
                format!("{:?}", e.trace.final_distance()),
                e.first_within_tol.map_or(String::new(), |t| t.to_string()),
                (e.trace.final_distance() <= report.spec.tol).to_string(),
            ],
        )?;
    }
    flush(&mut summary)
}

/// One row per `(n, beta)` pair, each drawn with `seed`.
pub fn bound_rows(ns: &[usize], betas: &[f64], seed: u64) -> Result<Vec<BoundRow>> {
    let mut rows = Vec::with_capacity(ns.len() * betas.len());
    for &beta in betas {
        if !(beta > 0.0) {
            return Err(Error::Config(format!("bound table needs beta > 0, got {beta}")));
        }
        for &n in ns {
            rows.push(bound_table(n, beta, seed)?);
        }
    }
    Ok(rows)
}

pub fn write_bound_table(rows: &[BoundRow], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(&mut w, BOUND_HEADER)?;
    for r in rows {
        write_row(
            &mut w,
            [
                r.n.to_string(),
                format!("{:?}", r.beta),
                format!("{:?}", r.lse),
                format!("{:?}", r.sm),
                format!("{:?}", r.entropy_term),
                format!("{:?}", r.max),
            ],
        )?;
    }
    flush(&mut w)
}
