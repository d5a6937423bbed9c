use rand::Rng;

use super::{EnvSpec, Environment, EpisodeClock, StepResult};
use crate::rng::seeded;

const DT: f64 = 0.05;
const WALL: f64 = 2.0;
const MAX_SPEED: f64 = 2.0;
const START_RADIUS: f64 = 1.5;
const EPISODE_LENGTH: usize = 1000;

/// Planar double integrator steered toward the origin.
///
/// State is `(x, y, vx, vy)`; walls at `|x|, |y| = 2` stop the velocity
/// component pushing into them.
#[derive(Debug, Clone, Default)]
pub struct PointMass {
    pos: [f64; 2],
    vel: [f64; 2],
    clock: EpisodeClock,
}

impl PointMass {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2]) {
        self.pos = pos;
        self.vel = vel;
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }
}

impl Environment for PointMass {
    fn name(&self) -> &'static str {
        "pointmass"
    }

    fn spec(&self) -> EnvSpec {
        EnvSpec {
            state_dim: 4,
            action_dim: 2,
            episode_length: EPISODE_LENGTH,
            reward_bounds: (-(2.0 * WALL * WALL).sqrt() - 0.02, 0.0),
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = seeded(seed);
        for p in &mut self.pos {
            *p = rng.random_range(-START_RADIUS..=START_RADIUS);
        }
        self.vel = [0.0; 2];
        self.clock.reset();
        self.observation()
    }

    fn step_clipped(&mut self, action: &[f64]) -> StepResult {
        for ((pos, vel), a) in self.pos.iter_mut().zip(&mut self.vel).zip(action) {
            *vel = (*vel + a * DT).clamp(-MAX_SPEED, MAX_SPEED);
            *pos += *vel * DT;
            if pos.abs() > WALL {
                *pos = pos.clamp(-WALL, WALL);
                *vel = 0.0;
            }
        }
        let dist = self.pos[0].hypot(self.pos[1]);
        let effort = action[0] * action[0] + action[1] * action[1];
        StepResult {
            next_state: self.observation(),
            reward: -dist - 0.01 * effort,
            terminal: false,
            truncated: self.clock.tick(EPISODE_LENGTH),
        }
    }
}
