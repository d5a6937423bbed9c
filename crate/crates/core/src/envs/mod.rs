//! Seedable continuous-control environments behind one object-safe trait.
//!
//! Actions live in `[-1, 1]^d`. Out-of-range actions are clipped with a
//! logged warning; non-finite actions are rejected.

mod bandit;
mod pendulum;
mod pointmass;

use std::collections::BTreeMap;

use crate::error::{check_dim, Error, Result};

pub use bandit::{Bandit2d, BanditMode, BANDIT_MODES};
pub use pendulum::Pendulum;
pub use pointmass::PointMass;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub episode_length: usize,
    pub reward_bounds: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    /// Set only when the episode-length cap is reached on a non-terminal step.
    pub truncated: bool,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

pub trait Environment: Send {
    fn name(&self) -> &'static str;
    fn spec(&self) -> EnvSpec;
    /// Deterministic initial state for `seed`; zeroes the step counter.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    /// Advances one step with an action already validated and clipped.
    fn step_clipped(&mut self, action: &[f64]) -> StepResult;

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let spec = self.spec();
        check_dim("Environment::step action", spec.action_dim, action.len())?;
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Domain(format!("non-finite action {action:?}")));
        }
        if action.iter().any(|a| a.abs() > 1.0) {
            log::warn!("{}: action {action:?} outside [-1, 1], clipping", self.name());
            let clipped: Vec<f64> = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
            return Ok(self.step_clipped(&clipped));
        }
        Ok(self.step_clipped(action))
    }
}

/// Counts steps and reports truncation at the episode-length cap.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct EpisodeClock {
    steps: usize,
}

impl EpisodeClock {
    pub(crate) fn reset(&mut self) {
        self.steps = 0;
    }

    /// Records one step and returns whether the cap is now reached.
    pub(crate) fn tick(&mut self, cap: usize) -> bool {
        self.steps += 1;
        self.steps >= cap
    }
}

pub type EnvFactory = fn() -> Box<dyn Environment>;

/// Environments constructible by name.
#[derive(Clone)]
pub struct EnvRegistry {
    factories: BTreeMap<&'static str, EnvFactory>,
}

impl EnvRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, factory: EnvFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn make(&self, name: &str) -> Result<Box<dyn Environment>> {
        self.factories.get(name).map(|f| f()).ok_or_else(|| {
            Error::Config(format!(
                "unknown environment `{name}` (known: {})",
                self.names().join(", ")
            ))
        })
    }
}

impl Default for EnvRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("pendulum", || Box::new(Pendulum::new()));
        r.register("pointmass", || Box::new(PointMass::new()));
        r.register("bandit2d", || Box::new(Bandit2d::new()));
        r
    }
}

pub fn make_env(name: &str) -> Result<Box<dyn Environment>> {
    EnvRegistry::default().make(name)
}
