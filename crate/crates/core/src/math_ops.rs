//! Log-sum-exp, softmax weighting and the greedy-Q softmax (GDQ) operator.
//!
//! Every routine subtracts the maximum before exponentiating, so inputs with
//! `beta * x` far beyond the `f64` exponent range stay finite.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

fn check_finite(x: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::Domain("empty input vector".into()));
    }
    if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite entry {bad}")));
    }
    Ok(())
}

fn check_beta(beta: f64) -> Result<()> {
    if beta.is_nan() || beta < 0.0 {
        return Err(Error::Domain(format!("beta must be nonnegative, got {beta}")));
    }
    Ok(())
}

fn max_of(x: &[f64]) -> f64 {
    x.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Probability weights of a softmax distribution together with the inverse
/// temperature that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxWeights {
    weights: Vec<f64>,
    beta: f64,
}

impl SoftmaxWeights {
    /// Wraps an explicit probability vector. Entries must be nonnegative and
    /// sum to one within `1e-12`.
    pub fn from_probabilities(weights: Vec<f64>, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        if weights.is_empty() {
            return Err(Error::Domain("empty weight vector".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Domain("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { weights, beta })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// `(1/beta) * log(sum_i exp(beta * x_i))`.
pub fn log_sum_exp(x: &[f64], beta: f64) -> Result<f64> {
    check_finite(x)?;
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::Domain(format!("beta must be positive, got {beta}")));
    }
    let m = max_of(x);
    let sum: f64 = x.iter().map(|v| (beta * (v - m)).exp()).sum();
    Ok(m + sum.ln() / beta)
}

/// Softmax weights `exp(beta x_i) / sum_j exp(beta x_j)`. `beta = 0` yields
/// the uniform distribution; ties share weight equally.
pub fn softmax_weights(x: &[f64], beta: f64) -> Result<SoftmaxWeights> {
    check_finite(x)?;
    check_beta(beta)?;
    let n = x.len();
    if beta == 0.0 {
        return Ok(SoftmaxWeights {
            weights: vec![1.0 / n as f64; n],
            beta,
        });
    }
    let m = max_of(x);
    let mut weights: Vec<f64> = x.iter().map(|v| (beta * (v - m)).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(SoftmaxWeights { weights, beta })
}

/// Softmax-weighted mean `sum_i p_i x_i`.
pub fn softmax_mean(x: &[f64], beta: f64) -> Result<f64> {
    let p = softmax_weights(x, beta)?;
    Ok(weighted_sum(p.weights(), x))
}

fn weighted_sum(p: &[f64], x: &[f64]) -> f64 {
    p.iter().zip(x).map(|(p, v)| p * v).sum()
}

/// Shannon entropy in nats, with `0 log 0 = 0`.
/// Never negative: a one-hot distribution yields `+0.0`.
pub fn entropy(w: &SoftmaxWeights) -> f64 {
    let h: f64 = w.weights().iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum();
    h.max(0.0)
}

/// Greedy and conservative Q values over one finite candidate action set.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredActions {
    q_max_values: Vec<f64>,
    q_min_values: Vec<f64>,
}

impl ScoredActions {
    pub fn new(q_max_values: Vec<f64>, q_min_values: Vec<f64>) -> Result<Self> {
        if q_max_values.len() != q_min_values.len() {
            return Err(Error::Domain(format!(
                "q_max has {} entries but q_min has {}",
                q_max_values.len(),
                q_min_values.len()
            )));
        }
        check_finite(&q_max_values)?;
        check_finite(&q_min_values)?;
        if q_max_values.iter().zip(&q_min_values).any(|(hi, lo)| hi < lo) {
            return Err(Error::Domain("q_max must dominate q_min elementwise".into()));
        }
        Ok(Self {
            q_max_values,
            q_min_values,
        })
    }

    /// Builds the scored set from two raw estimators by taking the pointwise
    /// max and min.
    pub fn from_pair(q1: &[f64], q2: &[f64]) -> Result<Self> {
        if q1.len() != q2.len() {
            return Err(Error::Domain(format!(
                "estimator lengths differ: {} vs {}",
                q1.len(),
                q2.len()
            )));
        }
        let (hi, lo) = q1.iter().zip(q2).map(|(a, b)| (a.max(*b), a.min(*b))).unzip();
        Self::new(hi, lo)
    }

    pub fn q_max_values(&self) -> &[f64] {
        &self.q_max_values
    }

    pub fn q_min_values(&self) -> &[f64] {
        &self.q_min_values
    }
}

/// The GDQ operator: the conservative values averaged under softmax weights of
/// the greedy values.
pub fn gdq(scored: &ScoredActions, beta: f64) -> Result<f64> {
    let w = softmax_weights(&scored.q_max_values, beta)?;
    Ok(weighted_sum(w.weights(), &scored.q_min_values))
}

/// One row of the lse/softmax/entropy comparison table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundRow {
    pub n: usize,
    pub beta: f64,
    pub lse: f64,
    pub sm: f64,
    pub entropy_term: f64,
    pub max: f64,
}

/// Draws `n` integers uniformly from `[1, 1000]` and reports the log-sum-exp,
/// softmax mean, scaled entropy and maximum of the draw.
pub fn bound_table(n: usize, beta: f64, seed: u64) -> Result<BoundRow> {
    if n == 0 {
        return Err(Error::Domain("bound_table needs n >= 1".into()));
    }
    let mut rng = rng::seeded(seed);
    let draw: Vec<f64> = (0..n).map(|_| rng.random_range(1..=1000u32) as f64).collect();
    let weights = softmax_weights(&draw, beta)?;
    Ok(BoundRow {
        n,
        beta,
        lse: log_sum_exp(&draw, beta)?,
        sm: weighted_sum(weights.weights(), &draw),
        entropy_term: entropy(&weights) / beta,
        max: max_of(&draw),
    })
}
