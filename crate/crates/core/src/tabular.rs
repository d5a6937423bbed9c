//! Finite MDPs, an exact value-iteration oracle, and value iteration driven by
//! the GDQ operator over a pair of Q tables.

use rand::Rng;

use crate::error::{Error, Result};
use crate::math_ops::{gdq, softmax_mean, ScoredActions};
use crate::schedule::BetaSchedule;

/// A finite MDP with transition tensor indexed `(s, a, s')` and reward table
/// indexed `(s, a)`, both stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    gamma: f64,
    r_min: f64,
    r_max: f64,
}

impl TabularMdp {
    pub fn new(n_states: usize, n_actions: usize, transition: Vec<f64>, reward: Vec<f64>, gamma: f64) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Domain("MDP needs at least one state and one action".into()));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::Domain("transition tensor has the wrong size".into()));
        }
        if reward.len() != n_states * n_actions {
            return Err(Error::Domain("reward table has the wrong size".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Domain(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        for row in transition.chunks(n_states) {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::Domain("transition probabilities must be nonnegative".into()));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Domain(format!("transition row sums to {total}")));
            }
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::Domain("rewards must be finite".into()));
        }
        let r_min = reward.iter().copied().fold(f64::INFINITY, f64::min);
        let r_max = reward.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
            r_min,
            r_max,
        })
    }

    /// Random MDP: transition rows are normalized uniform draws, rewards are
    /// uniform in `[0, 1)`.
    pub fn random<R: Rng>(n_states: usize, n_actions: usize, gamma: f64, rng: &mut R) -> Result<Self> {
        let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            let row: Vec<f64> = (0..n_states).map(|_| rng.random::<f64>() + 1e-3).collect();
            let total: f64 = row.iter().sum();
            transition.extend(row.iter().map(|p| p / total));
        }
        let reward = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
        Self::new(n_states, n_actions, transition, reward, gamma)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward_bounds(&self) -> (f64, f64) {
        (self.r_min, self.r_max)
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    /// `r(s,a) + gamma * sum_s' p(s'|s,a) v(s')` for every `(s, a)`.
    fn backup(&self, v: &[f64]) -> QTable {
        let mut out = QTable::zeros(self.n_states, self.n_actions);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let next: f64 = self.transition_row(s, a).iter().zip(v).map(|(p, v)| p * v).sum();
                out.set(s, a, self.reward(s, a) + self.gamma * next);
            }
        }
        out
    }
}

/// A state-action value table.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn from_values(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::Domain("Q table has the wrong size".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("Q table entries must be finite".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn uniform<R: Rng>(n_states: usize, n_actions: usize, rng: &mut R) -> Self {
        Self {
            n_states,
            n_actions,
            values: (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect(),
        }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_states, self.n_actions)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Greedy action per state (first index on ties).
    pub fn greedy_policy(&self) -> Vec<usize> {
        (0..self.n_states)
            .map(|s| {
                let row = self.row(s);
                (0..row.len()).fold(0, |best, a| if row[a] > row[best] { a } else { best })
            })
            .collect()
    }
}

/// The two tables combined by the GDQ operator.
#[derive(Debug, Clone, PartialEq)]
pub struct QTablePair {
    pub q1: QTable,
    pub q2: QTable,
}

impl QTablePair {
    pub fn zeros(mdp: &TabularMdp) -> Self {
        Self {
            q1: QTable::zeros(mdp.n_states, mdp.n_actions),
            q2: QTable::zeros(mdp.n_states, mdp.n_actions),
        }
    }

    /// Independent uniform `[0, 1)` entries for each table.
    pub fn random<R: Rng>(mdp: &TabularMdp, rng: &mut R) -> Self {
        Self {
            q1: QTable::uniform(mdp.n_states, mdp.n_actions, rng),
            q2: QTable::uniform(mdp.n_states, mdp.n_actions, rng),
        }
    }

    fn scored(&self, s: usize) -> ScoredActions {
        ScoredActions::from_pair(self.q1.row(s), self.q2.row(s)).expect("tables share a shape and hold finite values")
    }

    /// Per-state GDQ values of the pair.
    pub fn gdq_values(&self, beta: f64) -> Result<Vec<f64>> {
        (0..self.q1.n_states).map(|s| gdq(&self.scored(s), beta)).collect()
    }

    /// `max_a min(q1, q2)(s, a)` per state.
    pub fn conservative_max(&self) -> Vec<f64> {
        (0..self.q1.n_states)
            .map(|s| {
                self.scored(s)
                    .q_min_values()
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }
}

/// Exact optimal Q by standard value iteration, stopping once the Bellman
/// residual `||TQ - Q||_inf` is at most `tol`.
pub fn value_iteration_oracle(mdp: &TabularMdp, tol: f64) -> Result<QTable> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let mut q = QTable::zeros(mdp.n_states, mdp.n_actions);
    let gap = mdp.r_max.abs().max(mdp.r_min.abs()) / (1.0 - mdp.gamma) + 1.0;
    let bound = if mdp.gamma == 0.0 {
        2
    } else {
        ((tol * (1.0 - mdp.gamma) / gap).ln() / mdp.gamma.ln()).ceil().max(0.0) as usize + 2
    };
    for _ in 0..bound.saturating_mul(2).max(16) {
        let v: Vec<f64> = (0..mdp.n_states)
            .map(|s| q.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let next = mdp.backup(&v);
        let residual = next.sup_distance(&q);
        q = next;
        if residual <= tol {
            return Ok(q);
        }
    }
    Err(Error::Domain("value iteration failed to converge".into()))
}

/// Exact value of a deterministic policy, solved by fixed-point iteration.
pub fn evaluate_policy(mdp: &TabularMdp, policy: &[usize], tol: f64) -> Result<QTable> {
    if policy.len() != mdp.n_states || policy.iter().any(|a| *a >= mdp.n_actions) {
        return Err(Error::Domain("policy does not match the MDP".into()));
    }
    let mut q = QTable::zeros(mdp.n_states, mdp.n_actions);
    loop {
        let v: Vec<f64> = (0..mdp.n_states).map(|s| q.get(s, policy[s])).collect();
        let next = mdp.backup(&v);
        let residual = next.sup_distance(&q);
        q = next;
        if residual <= tol {
            return Ok(q);
        }
    }
}

/// Which table(s) move toward the GDQ target on each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RefreshRule {
    /// Even iterations refresh `q1`, odd iterations refresh `q2`.
    #[default]
    Alternate,
    Simultaneous,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub beta_t: f64,
    pub sup_norm_to_qstar: f64,
    pub max_q1: f64,
    pub max_q2: f64,
    /// `max(||q1' - q1||, ||q2' - q2||)` for this iteration.
    pub step_change: f64,
}

#[derive(Debug, Clone)]
pub struct GdqTrace {
    pub rows: Vec<TraceRow>,
    pub final_pair: QTablePair,
    pub q_star: QTable,
}

impl GdqTrace {
    pub fn final_distance(&self) -> f64 {
        self.rows.last().map_or(f64::INFINITY, |r| r.sup_norm_to_qstar)
    }
}

/// Value iteration with the modified backup `r + gamma E[gdq_beta_t(Q(s', .))]`.
///
/// Runs exactly `max_iters` iterations; iteration `t` (1-based) uses
/// `beta_t = schedule.beta(t)`.
pub fn gdq_value_iteration(
    mdp: &TabularMdp,
    schedule: &BetaSchedule,
    max_iters: usize,
    init: QTablePair,
    rule: RefreshRule,
) -> Result<GdqTrace> {
    if max_iters == 0 {
        return Err(Error::Domain("max_iters must be at least 1".into()));
    }
    if init.q1.shape() != (mdp.n_states, mdp.n_actions) || init.q2.shape() != init.q1.shape() {
        return Err(Error::Domain("initial tables do not match the MDP".into()));
    }
    let q_star = value_iteration_oracle(mdp, 1e-12)?;
    let mut pair = init;
    let mut rows = Vec::with_capacity(max_iters);
    for t in 1..=max_iters {
        let beta_t = schedule.beta(t as u64);
        let v = pair.gdq_values(beta_t)?;
        let target = mdp.backup(&v);
        let mut change = 0.0f64;
        let refresh_q1 = rule == RefreshRule::Simultaneous || (t - 1) % 2 == 0;
        let refresh_q2 = rule == RefreshRule::Simultaneous || (t - 1) % 2 == 1;
        if refresh_q1 {
            change = change.max(target.sup_distance(&pair.q1));
            pair.q1 = target.clone();
        }
        if refresh_q2 {
            change = change.max(target.sup_distance(&pair.q2));
            pair.q2 = target;
        }
        rows.push(TraceRow {
            iteration: t,
            beta_t,
            sup_norm_to_qstar: pair.q1.sup_distance(&q_star).max(pair.q2.sup_distance(&q_star)),
            max_q1: pair.q1.max_value(),
            max_q2: pair.q2.max_value(),
            step_change: change,
        });
    }
    Ok(GdqTrace {
        rows,
        final_pair: pair,
        q_star,
    })
}

/// Single-table value iteration with the Boltzmann softmax backup. Returns the
/// table after each iteration.
pub fn softmax_value_iteration(
    mdp: &TabularMdp,
    schedule: &BetaSchedule,
    max_iters: usize,
    init: QTable,
) -> Result<Vec<QTable>> {
    let mut q = init;
    let mut out = Vec::with_capacity(max_iters);
    for t in 1..=max_iters {
        let beta_t = schedule.beta(t as u64);
        let v = (0..mdp.n_states)
            .map(|s| softmax_mean(q.row(s), beta_t))
            .collect::<Result<Vec<_>>>()?;
        q = mdp.backup(&v);
        out.push(q.clone());
    }
    Ok(out)
}
