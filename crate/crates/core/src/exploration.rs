//! Finite-support exploration policy built from greedy Q values.
//!
//! Candidates are drawn uniformly in pre-squash space from the box
//! `[mean - range * std, mean + range * std]` around the current policy head,
//! squashed into the action square, scored by the greedy (max) critic and
//! weighted by `softmax(beta_t * Q_max)`.

use ndarray::{Array2, ArrayView2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::critic::DoubleQ;
use crate::error::{check_dim, Error, Result};
use crate::math_ops::{entropy, log_sum_exp, softmax_weights, SoftmaxWeights};
use crate::policy::{squash, GaussianPolicy};
use crate::schedule::BetaSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationConfig {
    /// Inverse-temperature schedule over epochs; `beta_t = beta * epoch` by default.
    pub beta: BetaSchedule,
    /// Half-width of the sampling box in units of the policy std.
    pub sample_range: f64,
    /// Number of candidate actions.
    pub sample_count: usize,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        Self {
            beta: BetaSchedule::Linear { base: 1.0 },
            sample_range: 7.0,
            sample_count: 32,
        }
    }
}

impl ExplorationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_count == 0 {
            return Err(Error::Config("sample_count must be at least 1".into()));
        }
        if !(self.sample_range > 0.0) || !self.sample_range.is_finite() {
            return Err(Error::Config("sample_range must be positive".into()));
        }
        if !(self.beta.base() >= 0.0) {
            return Err(Error::Config("beta must be nonnegative".into()));
        }
        Ok(())
    }

    /// Inverse temperature for a 1-based epoch index.
    pub fn beta_t(&self, epoch: u64) -> f64 {
        self.beta.beta(epoch.max(1))
    }
}

#[derive(Debug, Clone)]
pub struct ExplorationPolicy {
    pub probe_state: Vec<f64>,
    /// Squashed candidate actions, one row each.
    pub candidates: Array2<f64>,
    /// Pre-squash coordinates of each candidate.
    pub pre_squash: Array2<f64>,
    pub q_max_values: Vec<f64>,
    pub weights: SoftmaxWeights,
    /// Policy head at the probe state: mean and clamped log-std.
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl ExplorationPolicy {
    pub fn len(&self) -> usize {
        self.candidates.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.nrows() == 0
    }

    pub fn candidate(&self, i: usize) -> Vec<f64> {
        self.candidates.row(i).to_vec()
    }

    /// Entropy of the candidate weights in nats.
    pub fn entropy(&self) -> f64 {
        entropy(&self.weights)
    }

    /// `KL(weights || q)` where `q` is the policy density restricted to the
    /// candidate set and renormalized.
    pub fn kl_to_policy(&self) -> Result<f64> {
        let log_dens: Vec<f64> = self
            .pre_squash
            .rows()
            .into_iter()
            .map(|u| {
                let u = u.as_slice().expect("rows of an owned array are contiguous");
                GaussianPolicy::log_prob_pre_squash(&self.mean, &self.log_std, u)
            })
            .collect();
        let log_norm = log_sum_exp(&log_dens, 1.0)?;
        Ok(self
            .weights
            .weights()
            .iter()
            .zip(&log_dens)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, ld)| w * (w.ln() - (ld - log_norm)))
            .sum())
    }
}

pub fn build_exploration_policy<R: Rng + ?Sized>(
    state: &[f64],
    policy: &GaussianPolicy,
    critic: &DoubleQ,
    beta_t: f64,
    config: &ExplorationConfig,
    rng: &mut R,
) -> Result<ExplorationPolicy> {
    config.validate()?;
    check_dim("build_exploration_policy state", critic.state_dim(), state.len())?;
    let (mean, log_std) = policy.head(state)?;
    let d = policy.action_dim();
    let n = config.sample_count;
    let mut pre_squash = Array2::zeros((n, d));
    for mut row in pre_squash.rows_mut() {
        for i in 0..d {
            let half = config.sample_range * log_std[i].exp();
            row[i] = rng.random_range(mean[i] - half..=mean[i] + half);
        }
    }
    let candidates = pre_squash.mapv(squash);
    let states = ArrayView2::from_shape((1, state.len()), state)
        .map_err(|e| Error::Domain(e.to_string()))?
        .broadcast((n, state.len()))
        .expect("row broadcasts to candidate count")
        .to_owned();
    let q_max_values = critic.q_max_batch(states.view(), candidates.view(), false)?.to_vec();
    if q_max_values.iter().any(|q| !q.is_finite()) {
        return Err(Error::Training("non-finite Q value while scoring candidates".into()));
    }
    let weights = softmax_weights(&q_max_values, beta_t)?;
    Ok(ExplorationPolicy {
        probe_state: state.to_vec(),
        candidates,
        pre_squash,
        q_max_values,
        weights,
        mean,
        log_std,
    })
}

/// Categorical draw over the candidates by their weights.
pub fn sample_exploration_action<R: Rng + ?Sized>(pi_e: &ExplorationPolicy, rng: &mut R) -> Vec<f64> {
    let index = WeightedIndex::new(pi_e.weights.weights())
        .expect("softmax weights are a valid distribution")
        .sample(rng);
    pi_e.candidate(index)
}
