//! Tanh-squashed diagonal Gaussian actor.
//!
//! The trunk maps a state to `2 * action_dim` outputs: the per-dimension mean
//! followed by the unclamped log standard deviation. Actions are
//! `tanh(mean + std * noise)` with standard-normal `noise`.

use std::f64::consts::LN_2;
use std::io::{Read, Write};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::critic::DoubleQ;
use crate::error::{check_dim, Error, Result};
use crate::neural::{read_f64, read_network, read_u64, write_network, Mlp};

pub const DEFAULT_LOG_STD_BOUNDS: (f64, f64) = (-20.0, 2.0);

/// Largest magnitude an emitted action coordinate may take.
pub const ACTION_LIMIT: f64 = 1.0 - 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

pub fn squash(u: f64) -> f64 {
    u.tanh().clamp(-ACTION_LIMIT, ACTION_LIMIT)
}

/// `log(1 - tanh(u)^2)` without cancellation for large `|u|`.
pub fn log1m_tanh_sq(u: f64) -> f64 {
    let a = u.abs();
    2.0 * (LN_2 - a - (-2.0 * a).exp().ln_1p())
}

/// Log-density of the squashed action for one coordinate, given the
/// pre-squash draw `u` and the standardized noise `(u - mean) / std`.
fn coord_log_prob(u: f64, standardized: f64, log_std: f64) -> f64 {
    -0.5 * standardized * standardized - log_std - HALF_LN_2PI - log1m_tanh_sq(u)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledAction {
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub pre_squash: Vec<f64>,
}

/// Per-state mean and clamped log-std, one row per state.
#[derive(Debug, Clone)]
pub struct PolicyHead {
    pub mean: Array2<f64>,
    pub log_std: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    trunk: Mlp,
    action_dim: usize,
    log_std_bounds: (f64, f64),
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * action_dim);
        Self::from_trunk(Mlp::new_random(&sizes, rng)?, action_dim, DEFAULT_LOG_STD_BOUNDS)
    }

    pub fn from_trunk(trunk: Mlp, action_dim: usize, log_std_bounds: (f64, f64)) -> Result<Self> {
        if action_dim == 0 {
            return Err(Error::Domain("action_dim must be positive".into()));
        }
        check_dim("GaussianPolicy trunk output", 2 * action_dim, trunk.output_dim())?;
        if !(log_std_bounds.0 < log_std_bounds.1) {
            return Err(Error::Domain("log-std bounds must be increasing".into()));
        }
        Ok(Self {
            trunk,
            action_dim,
            log_std_bounds,
        })
    }

    pub fn trunk(&self) -> &Mlp {
        &self.trunk
    }

    pub fn trunk_mut(&mut self) -> &mut Mlp {
        &mut self.trunk
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn state_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn log_std_bounds(&self) -> (f64, f64) {
        self.log_std_bounds
    }

    fn split_head(&self, out: &Array2<f64>) -> PolicyHead {
        let d = self.action_dim;
        let (lo, hi) = self.log_std_bounds;
        PolicyHead {
            mean: out.slice(s![.., ..d]).to_owned(),
            log_std: out.slice(s![.., d..]).mapv(|v| v.clamp(lo, hi)),
        }
    }

    pub fn head_batch(&self, states: ArrayView2<'_, f64>) -> Result<PolicyHead> {
        if states.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite state".into()));
        }
        Ok(self.split_head(&self.trunk.forward_batch(states)?))
    }

    /// Mean and clamped log-std at one state.
    pub fn head(&self, state: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = ArrayView2::from_shape((1, state.len()), state).map_err(|_| Error::Domain("bad state shape".into()))?;
        check_dim("GaussianPolicy::head", self.state_dim(), state.len())?;
        let h = self.head_batch(x)?;
        Ok((h.mean.row(0).to_vec(), h.log_std.row(0).to_vec()))
    }

    pub fn sample_action(&self, state: &[f64], noise: &[f64]) -> Result<SampledAction> {
        check_dim("GaussianPolicy::sample_action noise", self.action_dim, noise.len())?;
        let (mean, log_std) = self.head(state)?;
        let mut log_prob = 0.0;
        let mut action = Vec::with_capacity(self.action_dim);
        let mut pre_squash = Vec::with_capacity(self.action_dim);
        for i in 0..self.action_dim {
            let u = mean[i] + log_std[i].exp() * noise[i];
            log_prob += coord_log_prob(u, noise[i], log_std[i]);
            action.push(squash(u));
            pre_squash.push(u);
        }
        Ok(SampledAction {
            action,
            log_prob,
            pre_squash,
        })
    }

    /// Batched reparameterized sampling. Returns `(actions, log_probs)`.
    pub fn sample_batch(
        &self,
        states: ArrayView2<'_, f64>,
        noises: ArrayView2<'_, f64>,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        check_dim("GaussianPolicy::sample_batch noise", self.action_dim, noises.ncols())?;
        check_dim("GaussianPolicy::sample_batch rows", states.nrows(), noises.nrows())?;
        let head = self.head_batch(states)?;
        let mut actions = Array2::zeros(noises.raw_dim());
        let mut log_probs = Array1::zeros(states.nrows());
        for ((mut a_row, lp), ((m_row, ls_row), e_row)) in actions
            .axis_iter_mut(Axis(0))
            .zip(log_probs.iter_mut())
            .zip(head.mean.rows().into_iter().zip(head.log_std.rows()).zip(noises.rows()))
        {
            for i in 0..self.action_dim {
                let u = m_row[i] + ls_row[i].exp() * e_row[i];
                *lp += coord_log_prob(u, e_row[i], ls_row[i]);
                a_row[i] = squash(u);
            }
        }
        Ok((actions, log_probs))
    }

    /// The deterministic evaluation action `tanh(mean)`.
    pub fn mode_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        let (mean, _) = self.head(state)?;
        Ok(mean.into_iter().map(squash).collect())
    }

    /// Log-density of a squashed action: the diagonal Gaussian density at
    /// `atanh(action)` minus `sum_i log(1 - action_i^2)`.
    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        check_dim("GaussianPolicy::log_prob action", self.action_dim, action.len())?;
        if action.iter().any(|a| !(a.abs() <= ACTION_LIMIT)) {
            return Err(Error::Domain("action lies on or outside the squashing boundary".into()));
        }
        let (mean, log_std) = self.head(state)?;
        Ok((0..self.action_dim)
            .map(|i| {
                let u = action[i].atanh();
                coord_log_prob(u, (u - mean[i]) / log_std[i].exp(), log_std[i])
            })
            .sum())
    }

    /// Log-density of the squashed action given its pre-squash coordinates
    /// and the head at the same state.
    pub fn log_prob_pre_squash(mean: &[f64], log_std: &[f64], u: &[f64]) -> f64 {
        (0..u.len())
            .map(|i| coord_log_prob(u[i], (u[i] - mean[i]) / log_std[i].exp(), log_std[i]))
            .sum()
    }
}

/// Loss `mean_b [alpha * log pi(a_b|s_b) - Q_min(s_b, a_b)]` with
/// `a_b = tanh(mean + std * noise_b)` and its reparameterized gradient with
/// respect to the policy parameters. The critic is held fixed.
pub fn policy_loss_and_grad(
    policy: &GaussianPolicy,
    critic: &DoubleQ,
    states: ArrayView2<'_, f64>,
    noises: ArrayView2<'_, f64>,
    alpha: f64,
) -> Result<(f64, Vec<f64>)> {
    let batch = states.nrows();
    if batch == 0 {
        return Err(Error::Domain("empty policy batch".into()));
    }
    check_dim("policy_loss_and_grad noise rows", batch, noises.nrows())?;
    check_dim("policy_loss_and_grad noise cols", policy.action_dim, noises.ncols())?;
    let d = policy.action_dim;
    let (lo, hi) = policy.log_std_bounds;
    let cache = policy.trunk.forward_cached(states)?;
    let out = cache.output();

    let mut pre = Array2::zeros((batch, d));
    let mut actions = Array2::zeros((batch, d));
    let mut log_probs = Array1::<f64>::zeros(batch);
    for b in 0..batch {
        for i in 0..d {
            let log_std = out[[b, d + i]].clamp(lo, hi);
            let u = out[[b, i]] + log_std.exp() * noises[[b, i]];
            log_probs[b] += coord_log_prob(u, noises[[b, i]], log_std);
            pre[[b, i]] = u;
            actions[[b, i]] = squash(u);
        }
    }

    let (q_min, dq_da) = critic.conservative_action_grad(states, actions.view())?;
    let loss = (alpha * &log_probs - &q_min).sum() / batch as f64;
    if !loss.is_finite() {
        return Err(Error::Training(format!("policy loss is not finite: {loss}")));
    }

    let scale = 1.0 / batch as f64;
    let mut out_grad = Array2::zeros((batch, 2 * d));
    for b in 0..batch {
        for i in 0..d {
            let u = pre[[b, i]];
            let t = u.tanh();
            let da_du = if t.abs() > ACTION_LIMIT { 0.0 } else { 1.0 - t * t };
            // d(log pi)/du through the squashing correction is 2 tanh(u)
            let dl_du = scale * (alpha * 2.0 * t - dq_da[[b, i]] * da_du);
            out_grad[[b, i]] = dl_du;
            let raw = out[[b, d + i]];
            if raw >= lo && raw <= hi {
                let std = raw.exp();
                out_grad[[b, d + i]] = dl_du * std * noises[[b, i]] - scale * alpha;
            }
        }
    }
    let mut grad = vec![0.0; policy.trunk.params().len()];
    policy.trunk.backward_batch(&cache, out_grad.view(), Some(&mut grad))?;
    Ok((loss, grad))
}

const POLICY_MAGIC: &[u8; 8] = b"GACPOL01";

/// Policy blob: magic `GACPOL01`, `u64` action_dim, two `f64` log-std bounds,
/// then the trunk in the network layout.
pub fn write_policy<W: Write>(w: &mut W, policy: &GaussianPolicy) -> Result<()> {
    w.write_all(POLICY_MAGIC)?;
    w.write_all(&(policy.action_dim as u64).to_le_bytes())?;
    w.write_all(&policy.log_std_bounds.0.to_le_bytes())?;
    w.write_all(&policy.log_std_bounds.1.to_le_bytes())?;
    write_network(w, &policy.trunk)
}

pub fn read_policy<R: Read>(r: &mut R) -> Result<GaussianPolicy> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != POLICY_MAGIC {
        return Err(Error::Format("not a policy blob".into()));
    }
    let action_dim = read_u64(r)? as usize;
    let bounds = (read_f64(r)?, read_f64(r)?);
    let trunk = read_network(r)?;
    GaussianPolicy::from_trunk(trunk, action_dim, bounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::finite_difference_check;
    use crate::rng::seeded;
    use ndarray::Array2;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    fn zero_policy(state_dim: usize, action_dim: usize) -> GaussianPolicy {
        let trunk = Mlp::zeros(&[state_dim, 4, 2 * action_dim]).unwrap();
        GaussianPolicy::from_trunk(trunk, action_dim, DEFAULT_LOG_STD_BOUNDS).unwrap()
    }

    #[test]
    fn zero_noise_gives_mode() {
        let mut rng = seeded(2);
        let p = GaussianPolicy::new(3, 2, &[8], &mut rng).unwrap();
        let s = [0.1, -0.4, 0.9];
        let a = p.sample_action(&s, &[0.0, 0.0]).unwrap();
        assert_eq!(a.action, p.mode_action(&s).unwrap());
    }

    #[test]
    fn zero_trunk_is_symmetric() {
        let p = zero_policy(2, 1);
        let plus = p.sample_action(&[0.3, 0.3], &[0.7]).unwrap();
        let minus = p.sample_action(&[0.3, 0.3], &[-0.7]).unwrap();
        assert_eq!(plus.action[0], 0.7f64.tanh());
        assert_eq!(plus.action[0], -minus.action[0]);
        assert_eq!(plus.log_prob, minus.log_prob);
    }

    #[test]
    fn standard_normal_density_at_origin() {
        let p = zero_policy(1, 1);
        let lp = p.log_prob(&[0.0], &[0.0]).unwrap();
        assert!((lp - (1.0 / (2.0 * PI).sqrt()).ln()).abs() < 1e-12);
        assert!((lp + 0.918939).abs() < 1e-6);
    }

    #[test]
    fn log_prob_rejects_boundary() {
        let p = zero_policy(1, 1);
        assert!(p.log_prob(&[0.0], &[1.0]).is_err());
        assert!(p.log_prob(&[0.0], &[-1.0 + 1e-9]).is_err());
        assert!(p.log_prob(&[0.0], &[0.5, 0.5]).is_err());
        assert!(p.sample_action(&[f64::NAN], &[0.0]).is_err());
    }

    #[test]
    fn sample_and_log_prob_agree() {
        let mut rng = seeded(8);
        let p = GaussianPolicy::new(3, 2, &[16, 16], &mut rng).unwrap();
        for _ in 0..50 {
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let e: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            let a = p.sample_action(&s, &e).unwrap();
            let lp = p.log_prob(&s, &a.action).unwrap();
            assert!((lp - a.log_prob).abs() < 1e-10, "{lp} vs {}", a.log_prob);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let mut rng = seeded(31);
        let p = GaussianPolicy::new(2, 2, &[8], &mut rng).unwrap();
        let a = p.sample_action(&[0.2, 0.1], &[0.5, -1.2]).unwrap();
        let b = p.sample_action(&[0.2, 0.1], &[0.5, -1.2]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn extreme_means_stay_inside_the_box() {
        let mut params = vec![0.0; Mlp::param_count_for(&[1, 2])];
        params[2] = 50.0; // bias of the mean output
        params[3] = 2.0; // bias of the log-std output
        let p =
            GaussianPolicy::from_trunk(Mlp::from_params(&[1, 2], params).unwrap(), 1, DEFAULT_LOG_STD_BOUNDS).unwrap();
        for e in [-3.0, 0.0, 3.0] {
            let a = p.sample_action(&[0.0], &[e]).unwrap();
            assert!(a.action[0].abs() < 1.0);
            assert!(a.log_prob.is_finite());
        }
    }

    /// Midpoint quadrature of the 1-D squashed density over (-1, 1).
    fn density_mass(mean: f64, log_std: f64) -> f64 {
        let n = 400_000;
        let h = 2.0 / n as f64;
        (0..n)
            .map(|k| {
                let a: f64 = -1.0 + (k as f64 + 0.5) * h;
                let u = a.atanh();
                (coord_log_prob(u, (u - mean) / log_std.exp(), log_std)).exp() * h
            })
            .sum()
    }

    #[test]
    fn squashed_density_integrates_to_one() {
        let mut rng = seeded(77);
        assert!((density_mass(0.0, 0.0) - 1.0).abs() < 1e-3);
        for _ in 0..5 {
            let mean = rng.random_range(-1.5..1.5);
            let log_std = rng.random_range(-1.5..0.5);
            let mass = density_mass(mean, log_std);
            assert!((mass - 1.0).abs() < 1e-3, "mean {mean} log_std {log_std}: {mass}");
        }
    }

    #[test]
    fn log1m_tanh_sq_is_stable() {
        for u in [0.0, 0.3, -2.0, 10.0, -40.0] {
            let direct = (1.0 - f64::tanh(u).powi(2)).ln();
            if direct.is_finite() && u.abs() < 5.0 {
                assert!((log1m_tanh_sq(u) - direct).abs() < 1e-12);
            }
            assert!(log1m_tanh_sq(u).is_finite());
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = seeded(6);
        let p = GaussianPolicy::new(3, 1, &[5], &mut rng).unwrap();
        let mut buf = Vec::new();
        write_policy(&mut buf, &p).unwrap();
        assert_eq!(read_policy(&mut buf.as_slice()).unwrap(), p);
    }

    #[test]
    fn loss_with_zero_critic_is_mean_log_prob() {
        let mut rng = seeded(12);
        let p = GaussianPolicy::new(2, 2, &[8], &mut rng).unwrap();
        let critic = DoubleQ::from_networks(
            Mlp::zeros(&[4, 3, 1]).unwrap(),
            Mlp::zeros(&[4, 3, 1]).unwrap(),
            0.005,
            2,
            2,
        )
        .unwrap();
        let states = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0));
        let noises = Array2::from_shape_fn((6, 2), |_| rng.sample(StandardNormal));
        let (loss, _) = policy_loss_and_grad(&p, &critic, states.view(), noises.view(), 1.0).unwrap();
        let (_, lps) = p.sample_batch(states.view(), noises.view()).unwrap();
        assert!((loss - lps.mean().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        let mut rng = seeded(40);
        for case in 0..3 {
            let p = GaussianPolicy::new(2, 2, &[6, 6], &mut rng).unwrap();
            let critic = DoubleQ::new(2, 2, &[8, 8], 0.005, &mut rng).unwrap();
            let states = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));
            let noises = Array2::from_shape_fn((5, 2), |_| rng.sample(StandardNormal));
            let alpha = 0.3;
            let (_, grad) = policy_loss_and_grad(&p, &critic, states.view(), noises.view(), alpha).unwrap();
            let loss = |params: &[f64]| {
                let mut q = p.clone();
                q.trunk_mut().set_params(params).unwrap();
                policy_loss_and_grad(&q, &critic, states.view(), noises.view(), alpha)
                    .unwrap()
                    .0
            };
            let err = finite_difference_check(loss, p.trunk().params(), &grad, 1e-6, None).unwrap();
            assert!(err <= 1e-4, "case {case}: {err}");
        }
    }
}
