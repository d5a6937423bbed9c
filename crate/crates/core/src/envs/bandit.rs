use super::{EnvSpec, Environment, StepResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BanditMode {
    pub center: [f64; 2],
    pub weight: f64,
    pub width: f64,
}

/// Taller mode first.
pub const BANDIT_MODES: [BanditMode; 2] = [
    BanditMode {
        center: [0.6, 0.6],
        weight: 1.0,
        width: 0.15,
    },
    BanditMode {
        center: [-0.5, -0.5],
        weight: 0.6,
        width: 0.3,
    },
];

/// One-step bandit over `[-1, 1]^2` with a two-bump Gaussian reward.
///
/// The state is the constant zero vector of length one and every step is
/// terminal.
#[derive(Debug, Clone, Default)]
pub struct Bandit2d;

impl Bandit2d {
    pub fn new() -> Self {
        Self
    }

    pub fn reward(action: &[f64]) -> f64 {
        BANDIT_MODES
            .iter()
            .map(|m| {
                let d2 = (action[0] - m.center[0]).powi(2) + (action[1] - m.center[1]).powi(2);
                m.weight * (-d2 / (2.0 * m.width * m.width)).exp()
            })
            .sum()
    }

    /// Reward at the taller mode's center.
    pub fn peak_reward() -> f64 {
        Self::reward(&BANDIT_MODES[0].center)
    }
}

impl Environment for Bandit2d {
    fn name(&self) -> &'static str {
        "bandit2d"
    }

    fn spec(&self) -> EnvSpec {
        EnvSpec {
            state_dim: 1,
            action_dim: 2,
            episode_length: 1,
            reward_bounds: (0.0, BANDIT_MODES.iter().map(|m| m.weight).sum()),
        }
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        vec![0.0]
    }

    fn step_clipped(&mut self, action: &[f64]) -> StepResult {
        StepResult {
            next_state: vec![0.0],
            reward: Self::reward(action),
            terminal: true,
            truncated: false,
        }
    }
}
