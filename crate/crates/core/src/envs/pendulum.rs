use std::f64::consts::PI;

use rand::Rng;

use super::{EnvSpec, Environment, EpisodeClock, StepResult};
use crate::rng::seeded;

const GRAVITY: f64 = 10.0;
const MASS: f64 = 1.0;
const LENGTH: f64 = 1.0;
const DT: f64 = 0.05;
const MAX_TORQUE: f64 = 2.0;
const MAX_SPEED: f64 = 8.0;
const EPISODE_LENGTH: usize = 1000;

/// Pendulum swing-up with `theta = 0` upright.
///
/// Observation is `(cos theta, sin theta, theta_dot)`. The action scales the
/// maximum torque; the control penalty is charged on the normalized action so
/// the per-step cost stays within `pi^2 + 0.1 * 8^2 + 0.001`.
#[derive(Debug, Clone, Default)]
pub struct Pendulum {
    theta: f64,
    theta_dot: f64,
    clock: EpisodeClock,
}

/// Angle mapped into `[-pi, pi)`.
pub(crate) fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

impl Pendulum {
    pub fn new() -> Self {
        Self::default()
    }

    /// Raw `(theta, theta_dot)` state.
    pub fn physical_state(&self) -> (f64, f64) {
        (self.theta, self.theta_dot)
    }

    pub fn set_physical_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
    }

    /// Energy per unit inertia: `theta_dot^2 / 2 + (3g / 2l) cos theta`.
    pub fn energy(&self) -> f64 {
        0.5 * self.theta_dot * self.theta_dot + 1.5 * GRAVITY / LENGTH * self.theta.cos()
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

impl Environment for Pendulum {
    fn name(&self) -> &'static str {
        "pendulum"
    }

    fn spec(&self) -> EnvSpec {
        EnvSpec {
            state_dim: 3,
            action_dim: 1,
            episode_length: EPISODE_LENGTH,
            reward_bounds: (-(PI * PI + 0.1 * MAX_SPEED * MAX_SPEED + 0.001), 0.0),
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = seeded(seed);
        self.theta = rng.random_range(-PI..=PI);
        self.theta_dot = rng.random_range(-1.0..=1.0);
        self.clock.reset();
        self.observation()
    }

    fn step_clipped(&mut self, action: &[f64]) -> StepResult {
        let a = action[0];
        let th = wrap_angle(self.theta);
        let cost = th * th + 0.1 * self.theta_dot * self.theta_dot + 0.001 * a * a;
        let u = MAX_TORQUE * a;
        let acc = 1.5 * GRAVITY / LENGTH * self.theta.sin() + 3.0 / (MASS * LENGTH * LENGTH) * u;
        self.theta_dot = (self.theta_dot + acc * DT).clamp(-MAX_SPEED, MAX_SPEED);
        self.theta += self.theta_dot * DT;
        let truncated = self.clock.tick(EPISODE_LENGTH);
        StepResult {
            next_state: self.observation(),
            reward: -cost,
            terminal: false,
            truncated,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upright_rest_is_an_equilibrium() {
        let mut env = Pendulum::new();
        env.reset(0);
        env.set_physical_state(0.0, 0.0);
        for _ in 0..50 {
            let r = env.step(&[0.0]).unwrap();
            assert_eq!(r.reward, 0.0);
            assert_eq!(r.next_state, vec![1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn reset_distribution_is_documented_box() {
        let mut env = Pendulum::new();
        for seed in 0..200 {
            let s = env.reset(seed);
            let (th, thd) = env.physical_state();
            assert!((-PI..=PI).contains(&th));
            assert!((-1.0..=1.0).contains(&thd));
            assert_eq!(s, vec![th.cos(), th.sin(), thd]);
        }
        assert_eq!(env.reset(9), env.clone().reset(9));
    }

    #[test]
    fn wrap_angle_range() {
        for k in -20..=20 {
            let th = 0.37 * k as f64;
            let w = wrap_angle(th);
            assert!((-PI..PI).contains(&w));
            let turns = (th - w) / (2.0 * PI);
            assert!((turns - turns.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_torque_energy_drift_is_small() {
        let mut env = Pendulum::new();
        for (th, thd) in [(PI - 0.1, 0.0), (1.0, 0.5), (2.5, -1.0)] {
            env.reset(0);
            env.set_physical_state(th, thd);
            let e0 = env.energy();
            let n = 1000;
            for _ in 0..n {
                env.step(&[0.0]).unwrap();
            }
            let drift = (env.energy() - e0).abs() / n as f64;
            assert!(drift <= 1e-2, "drift {drift}");
        }
    }

    #[test]
    fn full_torque_accelerates() {
        let mut env = Pendulum::new();
        env.reset(0);
        env.set_physical_state(0.0, 0.0);
        let r = env.step(&[1.0]).unwrap();
        assert!(r.next_state[2] > 0.0);
        assert!((r.reward + 0.001).abs() < 1e-15);
    }
}
