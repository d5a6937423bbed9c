//! Training loop: behavior selection, replay, critic and policy updates,
//! target tracking and deterministic evaluation.
//!
//! Behavior selection is pluggable through [`BehaviorStrategy`]; the two
//! built-in strategies differ only in how the environment action is picked,
//! so the learning updates are shared.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::critic::{critic_loss_and_grad, td_target, DoubleQ};
use crate::envs::{make_env, EnvSpec, Environment};
use crate::error::{check_dim, Error, Result};
use crate::exploration::{build_exploration_policy, sample_exploration_action, ExplorationConfig};
use crate::neural::Adam;
use crate::policy::{policy_loss_and_grad, GaussianPolicy};
use crate::replay::{ReplayBuffer, Transition, DEFAULT_CAPACITY};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub env: String,
    pub mode: String,
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub hidden: Vec<usize>,
    pub alpha: f64,
    pub exploration: ExplorationConfig,
    pub steps_per_epoch: usize,
    pub total_epochs: usize,
    pub warmup_steps: usize,
    /// Fresh policy samples averaged per TD target.
    pub target_samples: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: "pendulum".into(),
            mode: "gac".into(),
            gamma: 0.99,
            tau: 0.005,
            lr: 3e-4,
            batch_size: 256,
            buffer_capacity: DEFAULT_CAPACITY,
            hidden: vec![256, 256],
            alpha: 1.0,
            exploration: ExplorationConfig::default(),
            steps_per_epoch: 1000,
            total_epochs: 100,
            warmup_steps: 1000,
            target_samples: 1,
            eval_episodes: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return bad(format!("alpha must be nonnegative, got {}", self.alpha));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("buffer_capacity", self.buffer_capacity),
            ("steps_per_epoch", self.steps_per_epoch),
            ("target_samples", self.target_samples),
            ("eval_episodes", self.eval_episodes),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        self.exploration.validate()?;
        if !BehaviorRegistry::default().contains(&self.mode) {
            return bad(format!("unknown mode `{}`", self.mode));
        }
        Ok(())
    }
}

/// One row per completed epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: u64,
    pub env_steps: u64,
    pub mean_exploration_return: f64,
    pub mean_eval_return: f64,
    pub critic_loss: f64,
    pub policy_loss: f64,
    pub beta_t: f64,
    pub pi_e_entropy: f64,
    pub pi_e_kl_to_policy: f64,
    pub wall_seconds: f64,
}

impl EpochMetrics {
    /// Every field except `wall_seconds`, which is timing noise.
    pub fn deterministic_fields(&self) -> [f64; 9] {
        [
            self.epoch as f64,
            self.env_steps as f64,
            self.mean_exploration_return,
            self.mean_eval_return,
            self.critic_loss,
            self.policy_loss,
            self.beta_t,
            self.pi_e_entropy,
            self.pi_e_kl_to_policy,
        ]
    }
}

pub struct BehaviorContext<'a> {
    pub state: &'a [f64],
    pub policy: &'a GaussianPolicy,
    pub critic: &'a DoubleQ,
    pub beta_t: f64,
    pub exploration: &'a ExplorationConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Behavior {
    pub action: Vec<f64>,
    /// Entropy and KL-to-policy of the candidate weights, when a finite
    /// exploration policy was built.
    pub diagnostics: Option<(f64, f64)>,
}

/// Picks environment actions once learning has started.
pub trait BehaviorStrategy: Send {
    fn name(&self) -> &'static str;
    fn act(&mut self, ctx: &BehaviorContext<'_>) -> Result<Behavior>;
}

/// Softmax over greedy-Q scores of sampled candidates.
pub struct GreedyQExploration {
    rng: ChaCha8Rng,
}

impl GreedyQExploration {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: stream(seed, Stream::Exploration),
        }
    }
}

impl BehaviorStrategy for GreedyQExploration {
    fn name(&self) -> &'static str {
        "gac"
    }

    fn act(&mut self, ctx: &BehaviorContext<'_>) -> Result<Behavior> {
        let pi_e = build_exploration_policy(
            ctx.state,
            ctx.policy,
            ctx.critic,
            ctx.beta_t,
            ctx.exploration,
            &mut self.rng,
        )?;
        let action = sample_exploration_action(&pi_e, &mut self.rng);
        Ok(Behavior {
            action,
            diagnostics: Some((pi_e.entropy(), pi_e.kl_to_policy()?)),
        })
    }
}

/// Draws from the learned squashed Gaussian itself.
pub struct PolicySampling {
    rng: ChaCha8Rng,
}

impl PolicySampling {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: stream(seed, Stream::Exploration),
        }
    }
}

impl BehaviorStrategy for PolicySampling {
    fn name(&self) -> &'static str {
        "sac_baseline"
    }

    fn act(&mut self, ctx: &BehaviorContext<'_>) -> Result<Behavior> {
        let noise: Vec<f64> = (0..ctx.policy.action_dim())
            .map(|_| self.rng.sample(StandardNormal))
            .collect();
        Ok(Behavior {
            action: ctx.policy.sample_action(ctx.state, &noise)?.action,
            diagnostics: None,
        })
    }
}

pub type BehaviorFactory = fn(u64) -> Box<dyn BehaviorStrategy>;

/// Behavior strategies constructible by mode name from a run seed.
#[derive(Clone)]
pub struct BehaviorRegistry {
    factories: BTreeMap<&'static str, BehaviorFactory>,
}

impl BehaviorRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, factory: BehaviorFactory) {
        self.factories.insert(name, factory);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn make(&self, name: &str, seed: u64) -> Result<Box<dyn BehaviorStrategy>> {
        self.factories
            .get(name)
            .map(|f| f(seed))
            .ok_or_else(|| Error::Config(format!("unknown mode `{name}` (known: {})", self.names().join(", "))))
    }
}

impl Default for BehaviorRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("gac", |seed| Box::new(GreedyQExploration::new(seed)));
        r.register("sac_baseline", |seed| Box::new(PolicySampling::new(seed)));
        r
    }
}

/// Undiscounted returns of deterministic `tanh(mean)` rollouts, one episode
/// per seed.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub returns: Vec<f64>,
}

impl EvalReport {
    pub fn mean(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.returns.len() as f64
    }
}

/// Episode seeds used for evaluation by a run with `seed`.
pub fn eval_seeds(seed: u64, episodes: usize) -> Vec<u64> {
    let mut rng = stream(seed, Stream::Eval);
    (0..episodes).map(|_| rng.random()).collect()
}

pub fn evaluate(env: &mut dyn Environment, policy: &GaussianPolicy, episodes: usize, seed: u64) -> Result<EvalReport> {
    evaluate_on_seeds(env, policy, &eval_seeds(seed, episodes))
}

pub fn evaluate_on_seeds(env: &mut dyn Environment, policy: &GaussianPolicy, seeds: &[u64]) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(Error::Domain("evaluation needs at least one episode".into()));
    }
    let spec = env.spec();
    check_dim("evaluate state_dim", spec.state_dim, policy.state_dim())?;
    check_dim("evaluate action_dim", spec.action_dim, policy.action_dim())?;
    let mut returns = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let mut state = env.reset(s);
        let mut total = 0.0;
        loop {
            let step = env.step(&policy.mode_action(&state)?)?;
            total += step.reward;
            if step.done() {
                break;
            }
            state = step.next_state;
        }
        returns.push(total);
    }
    Ok(EvalReport { returns })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Final,
    /// Written when training aborts on a numerical failure.
    Diagnostic,
}

/// Receives per-epoch metrics and checkpoints from [`train`].
pub trait TrainSink {
    fn record(&mut self, metrics: &EpochMetrics) -> Result<()>;

    fn checkpoint(&mut self, _agent: &Agent, _kind: CheckpointKind) -> Result<()> {
        Ok(())
    }
}

impl TrainSink for Vec<EpochMetrics> {
    fn record(&mut self, metrics: &EpochMetrics) -> Result<()> {
        self.push(metrics.clone());
        Ok(())
    }
}

#[derive(Debug, Default)]
struct EpochAccumulator {
    completed_returns: Vec<f64>,
    critic_loss: f64,
    policy_loss: f64,
    updates: usize,
    entropy: f64,
    kl: f64,
    diagnosed: usize,
}

pub struct Agent {
    config: TrainConfig,
    spec: EnvSpec,
    env: Box<dyn Environment>,
    eval_env: Box<dyn Environment>,
    policy: GaussianPolicy,
    critic: DoubleQ,
    policy_opt: Adam,
    critic_opts: [Adam; 2],
    buffer: ReplayBuffer,
    behavior: Box<dyn BehaviorStrategy>,
    env_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    warmup_rng: ChaCha8Rng,
    eval_seeds: Vec<u64>,
    state: Vec<f64>,
    episode_return: f64,
    env_steps: u64,
    epoch: u64,
}

impl Agent {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let env = make_env(&config.env)?;
        let eval_env = make_env(&config.env)?;
        let spec = env.spec();
        let mut init_rng = stream(config.seed, Stream::Init);
        let policy = GaussianPolicy::new(spec.state_dim, spec.action_dim, &config.hidden, &mut init_rng)?;
        let critic = DoubleQ::new(
            spec.state_dim,
            spec.action_dim,
            &config.hidden,
            config.tau,
            &mut init_rng,
        )?;
        let policy_opt = Adam::new(policy.trunk().params().len(), config.lr);
        let n_critic = critic.online()[0].params().len();
        let critic_opts = [Adam::new(n_critic, config.lr), Adam::new(n_critic, config.lr)];
        let buffer = ReplayBuffer::new(config.buffer_capacity, spec.state_dim, spec.action_dim)?;
        let behavior = BehaviorRegistry::default().make(&config.mode, config.seed)?;
        let seed = config.seed;
        let mut agent = Self {
            spec,
            env,
            eval_env,
            policy,
            critic,
            policy_opt,
            critic_opts,
            buffer,
            behavior,
            env_rng: stream(seed, Stream::Env),
            noise_rng: stream(seed, Stream::PolicyNoise),
            replay_rng: stream(seed, Stream::Replay),
            warmup_rng: stream(seed, Stream::Warmup),
            eval_seeds: eval_seeds(seed, config.eval_episodes),
            state: Vec::new(),
            episode_return: 0.0,
            env_steps: 0,
            epoch: 0,
            config,
        };
        agent.start_episode();
        Ok(agent)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn spec(&self) -> EnvSpec {
        self.spec
    }

    pub fn policy(&self) -> &GaussianPolicy {
        &self.policy
    }

    pub fn critic(&self) -> &DoubleQ {
        &self.critic
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    fn start_episode(&mut self) {
        let seed = self.env_rng.random();
        self.state = self.env.reset(seed);
        self.episode_return = 0.0;
    }

    fn normal_batch(&mut self, rows: usize) -> Array2<f64> {
        let d = self.spec.action_dim;
        Array2::from_shape_simple_fn((rows, d), || self.noise_rng.sample(StandardNormal))
    }

    /// Evaluates the current policy on the run's fixed evaluation seeds.
    pub fn evaluate(&mut self) -> Result<EvalReport> {
        evaluate_on_seeds(self.eval_env.as_mut(), &self.policy, &self.eval_seeds)
    }

    /// One critic step, one policy step and a target update. Returns
    /// `(critic_loss, policy_loss)`.
    pub fn gradient_step(&mut self) -> Result<(f64, f64)> {
        let batch = self.buffer.sample(self.config.batch_size, &mut self.replay_rng)?;
        let noises: Vec<Array2<f64>> = (0..self.config.target_samples)
            .map(|_| self.normal_batch(batch.len()))
            .collect();
        let targets = td_target(
            &self.critic,
            &self.policy,
            &batch,
            self.config.gamma,
            self.config.alpha,
            &noises,
        )?;
        let closs = critic_loss_and_grad(&self.critic, &batch, &targets)?;
        for ((net, opt), grad) in self
            .critic
            .online_mut()
            .into_iter()
            .zip(&mut self.critic_opts)
            .zip(&closs.grads)
        {
            opt.step(net.params_mut(), grad)?;
        }
        let noise = self.normal_batch(batch.len());
        let (ploss, pgrad) = policy_loss_and_grad(
            &self.policy,
            &self.critic,
            batch.states.view(),
            noise.view(),
            self.config.alpha,
        )?;
        self.policy_opt.step(self.policy.trunk_mut().params_mut(), &pgrad)?;
        self.critic.polyak_update();
        Ok((closs.loss, ploss))
    }

    fn env_step(&mut self, beta_t: f64, acc: &mut EpochAccumulator) -> Result<()> {
        let learning = self.env_steps >= self.config.warmup_steps as u64;
        let action = if learning {
            let ctx = BehaviorContext {
                state: &self.state,
                policy: &self.policy,
                critic: &self.critic,
                beta_t,
                exploration: &self.config.exploration,
            };
            let behavior = self.behavior.act(&ctx)?;
            if let Some((h, kl)) = behavior.diagnostics {
                acc.entropy += h;
                acc.kl += kl;
                acc.diagnosed += 1;
            }
            behavior.action
        } else {
            (0..self.spec.action_dim)
                .map(|_| self.warmup_rng.random_range(-1.0..=1.0))
                .collect()
        };
        let step = self.env.step(&action)?;
        self.env_steps += 1;
        self.episode_return += step.reward;
        let done = step.done();
        self.buffer.push(Transition {
            state: std::mem::take(&mut self.state),
            action,
            reward: step.reward,
            next_state: step.next_state.clone(),
            terminal: step.terminal,
            truncated: step.truncated,
        })?;
        if done {
            acc.completed_returns.push(self.episode_return);
            self.start_episode();
        } else {
            self.state = step.next_state;
        }
        if learning {
            let (c, p) = self.gradient_step()?;
            acc.critic_loss += c;
            acc.policy_loss += p;
            acc.updates += 1;
        }
        Ok(())
    }

    /// Runs one epoch of interaction and learning, then evaluates.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let started = Instant::now();
        let epoch = self.epoch + 1;
        let beta_t = self.config.exploration.beta_t(epoch);
        let mut acc = EpochAccumulator::default();
        for _ in 0..self.config.steps_per_epoch {
            self.env_step(beta_t, &mut acc)?;
        }
        let mean_exploration_return = if acc.completed_returns.is_empty() {
            self.episode_return
        } else {
            acc.completed_returns.iter().sum::<f64>() / acc.completed_returns.len() as f64
        };
        let per_update = |x: f64| if acc.updates == 0 { 0.0 } else { x / acc.updates as f64 };
        let per_diag = |x: f64| {
            if acc.diagnosed == 0 {
                0.0
            } else {
                x / acc.diagnosed as f64
            }
        };
        let metrics = EpochMetrics {
            epoch,
            env_steps: self.env_steps,
            mean_exploration_return,
            mean_eval_return: self.evaluate()?.mean(),
            critic_loss: per_update(acc.critic_loss),
            policy_loss: per_update(acc.policy_loss),
            beta_t,
            pi_e_entropy: per_diag(acc.entropy),
            pi_e_kl_to_policy: per_diag(acc.kl),
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        if let Some(bad) = metrics.deterministic_fields().iter().find(|v| !v.is_finite()) {
            return Err(Error::Training(format!("non-finite metric {bad} in epoch {epoch}")));
        }
        self.epoch = epoch;
        Ok(metrics)
    }
}

/// Trains for `config.total_epochs` epochs, streaming metrics to `sink`.
///
/// On a numerical failure a diagnostic checkpoint is emitted before the error
/// is returned; otherwise a final checkpoint closes the run.
pub fn train(config: TrainConfig, sink: &mut dyn TrainSink) -> Result<Agent> {
    let mut agent = Agent::new(config)?;
    for _ in 0..agent.config.total_epochs {
        match agent.run_epoch() {
            Ok(m) => sink.record(&m)?,
            Err(e @ Error::Training(_)) => {
                sink.checkpoint(&agent, CheckpointKind::Diagnostic)?;
                return Err(e);
            }
            Err(e) => return Err(e),
        }
    }
    sink.checkpoint(&agent, CheckpointKind::Final)?;
    Ok(agent)
}

/// Mean distance between behavior actions and `tanh(mean)` over `states`,
/// drawing `draws` actions per state from the gac strategy.
pub fn behavior_mode_distance(
    policy: &GaussianPolicy,
    critic: &DoubleQ,
    states: ArrayView2<'_, f64>,
    exploration: &ExplorationConfig,
    beta_t: f64,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    let mut strategy = GreedyQExploration::new(seed);
    let mut total = 0.0;
    for row in states.rows() {
        let state = row.to_vec();
        let mode = policy.mode_action(&state)?;
        let ctx = BehaviorContext {
            state: &state,
            policy,
            critic,
            beta_t,
            exploration,
        };
        for _ in 0..draws {
            let a = strategy.act(&ctx)?.action;
            total += a.iter().zip(&mode).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        }
    }
    Ok(total / (states.nrows() * draws) as f64)
}
