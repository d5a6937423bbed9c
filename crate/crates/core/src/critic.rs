//! Twin Q networks with Polyak-averaged targets.
//!
//! Each network maps `state ++ action` to a scalar. The greedy composition is
//! the pointwise max of the two outputs and the conservative one the min.

use std::io::{Read, Write};

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::neural::{read_f64, read_network, read_u64, write_network, Mlp};
use crate::policy::GaussianPolicy;

#[derive(Debug, Clone, PartialEq)]
pub struct DoubleQ {
    q1: Mlp,
    q2: Mlp,
    target_q1: Mlp,
    target_q2: Mlp,
    tau: f64,
    state_dim: usize,
    action_dim: usize,
}

/// Aligned minibatch of transitions. `done` is 1 for terminal transitions and
/// 0 otherwise, including time-limit truncations.
#[derive(Debug, Clone, PartialEq)]
pub struct TdBatch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub done: Array1<f64>,
}

impl TdBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rewards.len();
        check_dim("TdBatch states", n, self.states.nrows())?;
        check_dim("TdBatch actions", n, self.actions.nrows())?;
        check_dim("TdBatch next_states", n, self.next_states.nrows())?;
        check_dim("TdBatch done", n, self.done.len())?;
        if self.done.iter().any(|d| *d != 0.0 && *d != 1.0) {
            return Err(Error::Domain("done flags must be 0 or 1".into()));
        }
        Ok(())
    }
}

fn joint_input(states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_dim("critic input rows", states.nrows(), actions.nrows())?;
    concatenate(Axis(1), &[states, actions]).map_err(|e| Error::Domain(e.to_string()))
}

fn column(out: Array2<f64>) -> Array1<f64> {
    out.column(0).to_owned()
}

impl DoubleQ {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        tau: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let q1 = Mlp::new_random(&sizes, rng)?;
        let q2 = Mlp::new_random(&sizes, rng)?;
        Self::from_networks(q1, q2, tau, state_dim, action_dim)
    }

    /// Wraps two online networks; the targets start as exact copies.
    pub fn from_networks(q1: Mlp, q2: Mlp, tau: f64, state_dim: usize, action_dim: usize) -> Result<Self> {
        let (t1, t2) = (q1.clone(), q2.clone());
        Self::with_targets([q1, q2, t1, t2], tau, state_dim, action_dim)
    }

    pub fn with_targets(nets: [Mlp; 4], tau: f64, state_dim: usize, action_dim: usize) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::Domain(format!("tau must lie in (0, 1], got {tau}")));
        }
        let sizes = nets[0].layer_sizes();
        if nets.iter().any(|n| n.layer_sizes() != sizes) {
            return Err(Error::Domain("all four critic networks must share layer sizes".into()));
        }
        check_dim("DoubleQ input", state_dim + action_dim, nets[0].input_dim())?;
        check_dim("DoubleQ output", 1, nets[0].output_dim())?;
        let [q1, q2, target_q1, target_q2] = nets;
        Ok(Self {
            q1,
            q2,
            target_q1,
            target_q2,
            tau,
            state_dim,
            action_dim,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn online(&self) -> [&Mlp; 2] {
        [&self.q1, &self.q2]
    }

    pub fn targets(&self) -> [&Mlp; 2] {
        [&self.target_q1, &self.target_q2]
    }

    pub fn online_mut(&mut self) -> [&mut Mlp; 2] {
        [&mut self.q1, &mut self.q2]
    }

    fn pick(&self, use_targets: bool) -> (&Mlp, &Mlp) {
        if use_targets {
            (&self.target_q1, &self.target_q2)
        } else {
            (&self.q1, &self.q2)
        }
    }

    /// Raw outputs of both selected networks on a batch.
    pub fn evaluate(
        &self,
        states: ArrayView2<'_, f64>,
        actions: ArrayView2<'_, f64>,
        use_targets: bool,
    ) -> Result<(Array1<f64>, Array1<f64>)> {
        check_dim("DoubleQ states", self.state_dim, states.ncols())?;
        check_dim("DoubleQ actions", self.action_dim, actions.ncols())?;
        let x = joint_input(states, actions)?;
        let (a, b) = self.pick(use_targets);
        Ok((column(a.forward_batch(x.view())?), column(b.forward_batch(x.view())?)))
    }

    pub fn q_min_batch(
        &self,
        states: ArrayView2<'_, f64>,
        actions: ArrayView2<'_, f64>,
        use_targets: bool,
    ) -> Result<Array1<f64>> {
        let (a, b) = self.evaluate(states, actions, use_targets)?;
        Ok(ndarray::Zip::from(&a).and(&b).map_collect(|x, y| x.min(*y)))
    }

    pub fn q_max_batch(
        &self,
        states: ArrayView2<'_, f64>,
        actions: ArrayView2<'_, f64>,
        use_targets: bool,
    ) -> Result<Array1<f64>> {
        let (a, b) = self.evaluate(states, actions, use_targets)?;
        Ok(ndarray::Zip::from(&a).and(&b).map_collect(|x, y| x.max(*y)))
    }

    fn single(&self, state: &[f64], action: &[f64], use_targets: bool) -> Result<(f64, f64)> {
        check_dim("DoubleQ state", self.state_dim, state.len())?;
        check_dim("DoubleQ action", self.action_dim, action.len())?;
        let mut x = state.to_vec();
        x.extend_from_slice(action);
        let (a, b) = self.pick(use_targets);
        Ok((a.forward(&x)?[0], b.forward(&x)?[0]))
    }

    pub fn q_min(&self, state: &[f64], action: &[f64], use_targets: bool) -> Result<f64> {
        self.single(state, action, use_targets).map(|(a, b)| a.min(b))
    }

    pub fn q_max(&self, state: &[f64], action: &[f64], use_targets: bool) -> Result<f64> {
        self.single(state, action, use_targets).map(|(a, b)| a.max(b))
    }

    /// Conservative value of the online networks and its gradient with respect
    /// to the action, per row. Ties select the first network.
    pub fn conservative_action_grad(
        &self,
        states: ArrayView2<'_, f64>,
        actions: ArrayView2<'_, f64>,
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        let x = joint_input(states, actions)?;
        let c1 = self.q1.forward_cached(x.view())?;
        let c2 = self.q2.forward_cached(x.view())?;
        let n = x.nrows();
        let mut g1 = Array2::zeros((n, 1));
        let mut g2 = Array2::zeros((n, 1));
        let mut q_min = Array1::zeros(n);
        for r in 0..n {
            let (a, b) = (c1.output()[[r, 0]], c2.output()[[r, 0]]);
            if a <= b {
                g1[[r, 0]] = 1.0;
                q_min[r] = a;
            } else {
                g2[[r, 0]] = 1.0;
                q_min[r] = b;
            }
        }
        let d1 = self.q1.backward_batch(&c1, g1.view(), None)?;
        let d2 = self.q2.backward_batch(&c2, g2.view(), None)?;
        let grad = (d1 + d2).slice(s![.., self.state_dim..]).to_owned();
        Ok((q_min, grad))
    }

    /// `target <- tau * online + (1 - tau) * target` for both pairs.
    pub fn polyak_update(&mut self) {
        let tau = self.tau;
        for (online, target) in [(&self.q1, &mut self.target_q1), (&self.q2, &mut self.target_q2)] {
            for (t, o) in target.params_mut().iter_mut().zip(online.params()) {
                *t = tau * o + (1.0 - tau) * *t;
            }
        }
    }
}

/// Soft TD targets `r + (1 - done) * gamma * (Q_min_target(s', a') - alpha log pi(a'|s'))`
/// with `a'` drawn fresh from the policy. Each entry of `noises` is one
/// batch of standard-normal draws; the bootstrap term is averaged over them.
pub fn td_target(
    critic: &DoubleQ,
    policy: &GaussianPolicy,
    batch: &TdBatch,
    gamma: f64,
    alpha: f64,
    noises: &[Array2<f64>],
) -> Result<Array1<f64>> {
    batch.validate()?;
    if noises.is_empty() {
        return Err(Error::Domain("td_target needs at least one noise batch".into()));
    }
    let mut bootstrap = Array1::<f64>::zeros(batch.len());
    for noise in noises {
        let (next_actions, log_probs) = policy.sample_batch(batch.next_states.view(), noise.view())?;
        let q = critic.q_min_batch(batch.next_states.view(), next_actions.view(), true)?;
        bootstrap += &(q - alpha * log_probs);
    }
    bootstrap /= noises.len() as f64;
    let mut targets = batch.rewards.clone();
    for i in 0..targets.len() {
        if batch.done[i] == 0.0 {
            targets[i] += gamma * bootstrap[i];
        }
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::Training("non-finite TD target".into()));
    }
    Ok(targets)
}

#[derive(Debug, Clone)]
pub struct CriticLoss {
    /// Mean of the two per-network losses.
    pub loss: f64,
    /// `mean_b 1/2 (Q_i(s,a) - target)^2` for each online network.
    pub per_network: [f64; 2],
    /// Gradient of each network's own loss with respect to its parameters.
    pub grads: [Vec<f64>; 2],
}

pub fn critic_loss_and_grad(critic: &DoubleQ, batch: &TdBatch, targets: &Array1<f64>) -> Result<CriticLoss> {
    batch.validate()?;
    check_dim("critic_loss_and_grad targets", batch.len(), targets.len())?;
    if batch.is_empty() {
        return Err(Error::Domain("empty critic batch".into()));
    }
    let x = joint_input(batch.states.view(), batch.actions.view())?;
    let n = batch.len() as f64;
    let mut per_network = [0.0; 2];
    let mut grads: [Vec<f64>; 2] = Default::default();
    for (k, net) in [&critic.q1, &critic.q2].into_iter().enumerate() {
        let cache = net.forward_cached(x.view())?;
        let residual = &cache.output().column(0) - targets;
        per_network[k] = residual.mapv(|r| 0.5 * r * r).sum() / n;
        let out_grad = (residual / n).insert_axis(Axis(1));
        let mut g = vec![0.0; net.params().len()];
        net.backward_batch(&cache, out_grad.view(), Some(&mut g))?;
        grads[k] = g;
    }
    let loss = 0.5 * (per_network[0] + per_network[1]);
    if !loss.is_finite() {
        return Err(Error::Training(format!("critic loss is not finite: {loss}")));
    }
    Ok(CriticLoss {
        loss,
        per_network,
        grads,
    })
}

const CRITIC_MAGIC: &[u8; 8] = b"GACCRT01";

/// Critic blob: magic `GACCRT01`, `u64` state_dim, `u64` action_dim, `f64`
/// tau, then q1, q2, target q1, target q2 in the network layout.
pub fn write_critic<W: Write>(w: &mut W, critic: &DoubleQ) -> Result<()> {
    w.write_all(CRITIC_MAGIC)?;
    w.write_all(&(critic.state_dim as u64).to_le_bytes())?;
    w.write_all(&(critic.action_dim as u64).to_le_bytes())?;
    w.write_all(&critic.tau.to_le_bytes())?;
    for net in [&critic.q1, &critic.q2, &critic.target_q1, &critic.target_q2] {
        write_network(w, net)?;
    }
    Ok(())
}

pub fn read_critic<R: Read>(r: &mut R) -> Result<DoubleQ> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CRITIC_MAGIC {
        return Err(Error::Format("not a critic blob".into()));
    }
    let state_dim = read_u64(r)? as usize;
    let action_dim = read_u64(r)? as usize;
    let tau = read_f64(r)?;
    let nets = [read_network(r)?, read_network(r)?, read_network(r)?, read_network(r)?];
    DoubleQ::with_targets(nets, tau, state_dim, action_dim)
}
