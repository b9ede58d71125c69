//! Proximal policy optimization with a diagonal Gaussian policy, a separate
//! value network and the clipped surrogate objective.
//!
//! Rollouts are collected as whole episodes until at least
//! `segments * horizon` steps are stored, so every segment ends at a real
//! episode boundary and shaping never has to guess a successor reward.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::envsim::{Action, Env, Terminal, World, ACTION_DIM, STATE_DIM};
use crate::episode::{EpisodeObserver, EpisodeRecord};
use crate::error::{Result, TrainError};
use crate::neural::{Activation, AdamConfig, AdamState, AdamVec, GradientSet, Mlp, Trace};
use crate::scalar::Real;
use crate::shaping::{shape_trajectory, shaped_advantages, ShapingConfig};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig<T> {
    /// Steps per collection (T).
    pub horizon: usize,
    /// Segments per collection (N); a collection holds at least `N * T` steps.
    pub segments: usize,
    /// Optimization epochs per collection (K).
    pub epochs: usize,
    /// Minibatch size (M), at most `N * T`.
    pub minibatch_size: usize,
    pub clip_epsilon: T,
    pub gamma: T,
    pub value_coeff: T,
    pub entropy_coeff: T,
    pub hidden_sizes: Vec<usize>,
    pub init_log_std: T,
    pub adam: AdamConfig<T>,
}

impl<T: Real> Default for PpoConfig<T> {
    fn default() -> Self {
        Self {
            horizon: 2048,
            segments: 1,
            epochs: 10,
            minibatch_size: 32,
            clip_epsilon: T::lit(0.2),
            gamma: T::lit(0.99),
            value_coeff: T::lit(0.5),
            entropy_coeff: T::zero(),
            hidden_sizes: vec![64, 64],
            init_log_std: T::lit(-0.5),
            adam: AdamConfig::default(),
        }
    }
}

impl<T: Real> PpoConfig<T> {
    pub fn batch_steps(&self) -> usize {
        self.horizon * self.segments
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(TrainError::Config(m));
        if self.horizon == 0 || self.segments == 0 || self.epochs == 0 || self.minibatch_size == 0 {
            return err("ppo.horizon, ppo.segments, ppo.epochs and ppo.minibatch_size must be positive".into());
        }
        if self.minibatch_size > self.batch_steps() {
            return err(format!(
                "ppo.minibatch_size = {} exceeds segments * horizon = {}",
                self.minibatch_size,
                self.batch_steps()
            ));
        }
        if !(self.clip_epsilon > T::zero() && self.clip_epsilon < T::one()) {
            return err(format!("ppo.clip_epsilon must lie in (0, 1), got {}", self.clip_epsilon));
        }
        if !(self.gamma >= T::zero() && self.gamma <= T::one()) {
            return err(format!("ppo.gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.value_coeff >= T::zero() && self.entropy_coeff >= T::zero()) {
            return err("ppo.value_coeff and ppo.entropy_coeff must be non-negative".into());
        }
        if self.hidden_sizes.iter().any(|&h| h == 0) {
            return err(format!("ppo.hidden_sizes must be positive, got {:?}", self.hidden_sizes));
        }
        let (lo, hi) = (T::lit(LOG_STD_MIN), T::lit(LOG_STD_MAX));
        if !(self.init_log_std >= lo && self.init_log_std <= hi) {
            return err(format!("ppo.init_log_std must lie in [{LOG_STD_MIN}, {LOG_STD_MAX}]"));
        }
        self.adam.validate()?;
        Ok(())
    }
}

/// Diagonal Gaussian over normalized actions with a tanh-bounded mean, plus a state-value head.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy<T> {
    pub mean_net: Mlp<T>,
    pub log_std: [T; ACTION_DIM],
    pub value_net: Mlp<T>,
}

/// Gradients for every trainable part of a [`GaussianPolicy`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGradients<T> {
    pub mean: GradientSet<T>,
    pub log_std: [T; ACTION_DIM],
    pub value: GradientSet<T>,
}

fn half_log_two_pi<T: Real>() -> T {
    T::lit(0.5) * T::TAU().ln()
}

impl<T: Real> GaussianPolicy<T> {
    pub fn new(cfg: &PpoConfig<T>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = |out: usize| {
            let mut s = vec![STATE_DIM];
            s.extend_from_slice(&cfg.hidden_sizes);
            s.push(out);
            s
        };
        Ok(Self {
            mean_net: Mlp::init(&sizes(ACTION_DIM), Activation::Tanh, Activation::Tanh, rng.random())?,
            log_std: [cfg.init_log_std; ACTION_DIM],
            value_net: Mlp::init(&sizes(1), Activation::Tanh, Activation::Identity, rng.random())?,
        })
    }

    pub fn std(&self) -> [T; ACTION_DIM] {
        self.log_std.map(|l| l.exp())
    }

    pub fn mean(&self, state: &[T]) -> Result<Vec<T>> {
        Ok(self.mean_net.forward(state)?)
    }

    pub fn value(&self, state: &[T]) -> Result<T> {
        Ok(self.value_net.forward(state)?[0])
    }

    /// Log density of `action` given the mean, summed over dimensions.
    pub fn log_prob_at(&self, mean: &[T], action: &[T]) -> T {
        let mut lp = T::zero();
        for j in 0..ACTION_DIM {
            let z = (action[j] - mean[j]) / self.log_std[j].exp();
            lp -= T::lit(0.5) * z * z + self.log_std[j] + half_log_two_pi::<T>();
        }
        lp
    }

    pub fn log_prob(&self, state: &[T], action: &[T]) -> Result<T> {
        let mean = self.mean(state)?;
        Ok(self.log_prob_at(&mean, action))
    }

    /// Gradient of `log_prob(state, action)` with respect to the mean network and log-std.
    pub fn log_prob_grad(&self, state: &[T], action: &[T]) -> Result<(GradientSet<T>, [T; ACTION_DIM])> {
        let mut trace = Trace::default();
        self.mean_net.forward_trace(state, &mut trace)?;
        let mean = trace.output().to_vec();
        let mut up = [T::zero(); ACTION_DIM];
        let mut g_log_std = [T::zero(); ACTION_DIM];
        for j in 0..ACTION_DIM {
            let var = (T::lit(2.0) * self.log_std[j]).exp();
            let d = action[j] - mean[j];
            up[j] = d / var;
            g_log_std[j] = d * d / var - T::one();
        }
        let mut g = self.mean_net.zero_gradients();
        self.mean_net.backward_accumulate(&trace, &up, T::one(), &mut g, None)?;
        Ok((g, g_log_std))
    }

    pub fn entropy(&self) -> T {
        let per_dim = T::lit(0.5) + half_log_two_pi::<T>();
        self.log_std.iter().fold(T::zero(), |acc, &l| acc + l + per_dim)
    }

    /// Draws a normalized action; returns the unclamped sample and its log density.
    pub fn sample<R: Rng + ?Sized>(&self, state: &[T], rng: &mut R) -> Result<([T; ACTION_DIM], T)> {
        let mean = self.mean(state)?;
        let std = self.std();
        let a: [T; ACTION_DIM] = std::array::from_fn(|j| {
            let eps: f64 = StandardNormal.sample(rng);
            mean[j] + std[j] * T::lit(eps)
        });
        Ok((a, self.log_prob_at(&mean, &a)))
    }

    fn zero_gradients(&self) -> PolicyGradients<T> {
        PolicyGradients {
            mean: self.mean_net.zero_gradients(),
            log_std: [T::zero(); ACTION_DIM],
            value: self.value_net.zero_gradients(),
        }
    }
}

/// `min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)`.
pub fn clipped_loss<T: Real>(ratio: T, advantage: T, epsilon: T) -> Result<T> {
    if !(ratio > T::zero()) {
        return Err(TrainError::Config(format!("probability ratio must be positive, got {ratio}")));
    }
    let clipped = ratio.max(T::one() - epsilon).min(T::one() + epsilon);
    Ok((ratio * advantage).min(clipped * advantage))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep<T> {
    pub state: Vec<T>,
    /// Unclamped normalized sample.
    pub action: [T; ACTION_DIM],
    pub reward: T,
    pub shaped_reward: T,
    pub log_prob_old: T,
    pub value: T,
    pub done: bool,
}

/// Contiguous run of steps from one episode, `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment<T> {
    pub start: usize,
    pub end: usize,
    /// Value of the state after the last step; zero when the episode terminated.
    pub bootstrap_value: T,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Rollout<T> {
    pub steps: Vec<RolloutStep<T>>,
    pub segments: Vec<Segment<T>>,
}

impl<T> Rollout<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Runs whole episodes with `policy` until the rollout holds at least
/// `cfg.batch_steps()` steps or `max_episodes` episodes have been played.
/// `first_episode` numbers the emitted records.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollout<T: Real, R: Rng + ?Sized>(
    policy: &GaussianPolicy<T>,
    world: &World<T>,
    cfg: &PpoConfig<T>,
    shaping: &ShapingConfig<T>,
    rng: &mut R,
    max_episodes: usize,
    first_episode: usize,
    observer: &mut EpisodeObserver<'_, T>,
) -> Result<(Rollout<T>, Vec<EpisodeRecord<T>>)> {
    let mut rollout = Rollout::default();
    let mut records = Vec::new();
    while rollout.steps.len() < cfg.batch_steps() && records.len() < max_episodes {
        let (mut env, obs) = Env::new(world, rng.random())?;
        let mut state = obs.to_vec();
        let start = rollout.steps.len();
        let mut total = T::zero();
        let (terminal, last_state) = loop {
            let (action, log_prob_old) = policy.sample(&state, rng)?;
            let value = policy.value(&state)?;
            let res = env.step(Action::from_normalized(&action, world))?;
            total += res.reward;
            let next = res.observation.to_vec();
            rollout.steps.push(RolloutStep {
                state: std::mem::replace(&mut state, next),
                action,
                reward: res.reward,
                shaped_reward: res.reward,
                log_prob_old,
                value,
                done: matches!(res.terminal, Terminal::GoalReached | Terminal::Collided),
            });
            if res.terminal.is_done() {
                break (res.terminal, state);
            }
        };
        let end = rollout.steps.len();
        let raw: Vec<T> = rollout.steps[start..end].iter().map(|s| s.reward).collect();
        for (s, r) in rollout.steps[start..end].iter_mut().zip(shape_trajectory(&raw, shaping)?) {
            s.shaped_reward = r;
        }
        let bootstrap_value = if terminal == Terminal::TimedOut { policy.value(&last_state)? } else { T::zero() };
        rollout.segments.push(Segment { start, end, bootstrap_value });
        let rec = EpisodeRecord { episode: first_episode + records.len(), reward: total, steps: end - start, terminal };
        observer(&rec).map_err(TrainError::Aborted)?;
        records.push(rec);
    }
    Ok((rollout, records))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Advantages<T> {
    /// Finite-horizon advantages before standardization.
    pub raw: Vec<T>,
    /// Zero-mean, unit-variance copy used by the policy loss.
    pub normalized: Vec<T>,
    /// Value targets: `raw + value estimate`.
    pub returns: Vec<T>,
}

/// Per-segment finite-horizon advantages over the stored (shaped) rewards,
/// followed by batch standardization.
pub fn compute_advantages<T: Real>(rollout: &Rollout<T>, gamma: T) -> Result<Advantages<T>> {
    let mut raw = Vec::with_capacity(rollout.len());
    let mut covered = 0;
    for seg in &rollout.segments {
        if seg.start != covered || seg.end < seg.start || seg.end > rollout.len() {
            return Err(TrainError::Config("rollout segments do not tile the steps".into()));
        }
        let steps = &rollout.steps[seg.start..seg.end];
        let rewards: Vec<T> = steps.iter().map(|s| s.shaped_reward).collect();
        let mut values: Vec<T> = steps.iter().map(|s| s.value).collect();
        values.push(seg.bootstrap_value);
        raw.extend(shaped_advantages(&rewards, &values, gamma)?);
        covered = seg.end;
    }
    if covered != rollout.len() {
        return Err(TrainError::Config("rollout segments do not tile the steps".into()));
    }
    let returns = raw.iter().zip(&rollout.steps).map(|(&a, s)| a + s.value).collect();
    Ok(Advantages { normalized: standardize(&raw), raw, returns })
}

fn standardize<T: Real>(xs: &[T]) -> Vec<T> {
    if xs.is_empty() {
        return Vec::new();
    }
    let n = T::lit(xs.len() as f64);
    let mean = xs.iter().copied().sum::<T>() / n;
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    let denom = var.sqrt() + T::lit(1e-8);
    xs.iter().map(|&x| (x - mean) / denom).collect()
}

/// One minibatch sample for the combined loss.
#[derive(Debug, Clone, Copy)]
pub struct LossSample<'a, T> {
    pub state: &'a [T],
    pub action: &'a [T],
    pub log_prob_old: T,
    pub advantage: T,
    pub value_target: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown<T> {
    /// Mean clipped surrogate (the quantity being maximized).
    pub surrogate: T,
    pub value_loss: T,
    pub entropy: T,
    /// `-surrogate + value_coeff * value_loss - entropy_coeff * entropy`.
    pub total: T,
    pub clip_fraction: T,
}

/// Combined minibatch loss and its exact gradient.
pub fn ppo_loss_and_grad<T: Real>(
    policy: &GaussianPolicy<T>,
    batch: &[LossSample<'_, T>],
    cfg: &PpoConfig<T>,
) -> Result<(LossBreakdown<T>, PolicyGradients<T>)> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let n = T::lit(batch.len() as f64);
    let mut grads = policy.zero_gradients();
    let mut mean_trace = Trace::default();
    let mut value_trace = Trace::default();
    let var = policy.log_std.map(|l| (T::lit(2.0) * l).exp());
    let mut out = LossBreakdown::default();
    let mut clipped_count = 0usize;
    for s in batch {
        policy.mean_net.forward_trace(s.state, &mut mean_trace)?;
        let mean = mean_trace.output();
        let lp = policy.log_prob_at(mean, s.action);
        let ratio = (lp - s.log_prob_old).exp();
        let surr = clipped_loss(ratio, s.advantage, cfg.clip_epsilon)?;
        out.surrogate += surr / n;
        // d(surrogate)/d(log_prob): the unclipped branch is active whenever it attains the min.
        let unclipped = ratio * s.advantage;
        let d_lp = if unclipped <= surr {
            unclipped
        } else {
            clipped_count += 1;
            T::zero()
        };
        let coef = -d_lp / n;
        let mut up = [T::zero(); ACTION_DIM];
        for j in 0..ACTION_DIM {
            let d = s.action[j] - mean[j];
            up[j] = d / var[j];
            grads.log_std[j] += coef * (d * d / var[j] - T::one());
        }
        policy.mean_net.backward_accumulate(&mean_trace, &up, coef, &mut grads.mean, None)?;

        policy.value_net.forward_trace(s.state, &mut value_trace)?;
        let err = value_trace.output()[0] - s.value_target;
        out.value_loss += err * err / n;
        let up_v = [T::lit(2.0) * cfg.value_coeff * err / n];
        policy.value_net.backward_accumulate(&value_trace, &up_v, T::one(), &mut grads.value, None)?;
    }
    out.entropy = policy.entropy();
    for g in &mut grads.log_std {
        *g -= cfg.entropy_coeff;
    }
    out.total = -out.surrogate + cfg.value_coeff * out.value_loss - cfg.entropy_coeff * out.entropy;
    out.clip_fraction = T::lit(clipped_count as f64) / n;
    Ok((out, grads))
}

/// Optimizer state for all policy parts.
#[derive(Debug, Clone)]
pub struct PpoOptimizer<T> {
    pub mean: AdamState<T>,
    pub log_std: AdamVec<T>,
    pub value: AdamState<T>,
}

impl<T: Real> PpoOptimizer<T> {
    pub fn new(policy: &GaussianPolicy<T>, adam: AdamConfig<T>) -> Result<Self> {
        Ok(Self {
            mean: AdamState::new(&policy.mean_net, adam)?,
            log_std: AdamVec::new(ACTION_DIM, adam)?,
            value: AdamState::new(&policy.value_net, adam)?,
        })
    }

    pub fn step(&mut self, policy: &mut GaussianPolicy<T>, grads: &PolicyGradients<T>) -> Result<()> {
        self.mean.step(&mut policy.mean_net, &grads.mean)?;
        self.log_std.step(&mut policy.log_std, &grads.log_std)?;
        let (lo, hi) = (T::lit(LOG_STD_MIN), T::lit(LOG_STD_MAX));
        for l in &mut policy.log_std {
            *l = l.max(lo).min(hi);
        }
        self.value.step(&mut policy.value_net, &grads.value)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats<T> {
    pub surrogate: T,
    pub value_loss: T,
    pub entropy: T,
    pub clip_fraction: T,
    pub optimizer_steps: usize,
}

/// `K` epochs over shuffled minibatches of size `M`, one Adam step per
/// minibatch. Each epoch uses `len / M` full minibatches; the leftover
/// samples differ from epoch to epoch because of the reshuffle.
pub fn ppo_update<T: Real, R: Rng + ?Sized>(
    policy: &mut GaussianPolicy<T>,
    opt: &mut PpoOptimizer<T>,
    rollout: &Rollout<T>,
    adv: &Advantages<T>,
    cfg: &PpoConfig<T>,
    rng: &mut R,
) -> Result<UpdateStats<T>> {
    if cfg.minibatch_size > cfg.batch_steps() {
        return Err(TrainError::Config(format!(
            "minibatch size {} exceeds segments * horizon = {}",
            cfg.minibatch_size,
            cfg.batch_steps()
        )));
    }
    if rollout.len() < cfg.minibatch_size {
        return Err(TrainError::EmptyBatch);
    }
    if adv.normalized.len() != rollout.len() || adv.returns.len() != rollout.len() {
        return Err(TrainError::Config("advantages do not match rollout length".into()));
    }
    let mut order: Vec<usize> = (0..rollout.len()).collect();
    let mut stats = UpdateStats::default();
    let mut batch = Vec::with_capacity(cfg.minibatch_size);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks_exact(cfg.minibatch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| {
                let s = &rollout.steps[i];
                LossSample {
                    state: &s.state,
                    action: &s.action,
                    log_prob_old: s.log_prob_old,
                    advantage: adv.normalized[i],
                    value_target: adv.returns[i],
                }
            }));
            let (loss, grads) = ppo_loss_and_grad(policy, &batch, cfg)?;
            opt.step(policy, &grads)?;
            stats.surrogate += loss.surrogate;
            stats.value_loss += loss.value_loss;
            stats.entropy += loss.entropy;
            stats.clip_fraction += loss.clip_fraction;
            stats.optimizer_steps += 1;
        }
    }
    let k = T::lit(stats.optimizer_steps.max(1) as f64);
    stats.surrogate /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    stats.clip_fraction /= k;
    Ok(stats)
}

/// Alternates collection and optimization until `episodes` episodes have been played.
pub fn train_ppo<T: Real>(
    world: &World<T>,
    cfg: &PpoConfig<T>,
    shaping: &ShapingConfig<T>,
    episodes: usize,
    seed: u64,
    observer: &mut EpisodeObserver<'_, T>,
) -> Result<Vec<EpisodeRecord<T>>> {
    cfg.validate()?;
    shaping.validate()?;
    world.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut policy = GaussianPolicy::new(cfg, rng.random())?;
    let mut opt = PpoOptimizer::new(&policy, cfg.adam)?;
    let mut log = Vec::with_capacity(episodes);
    while log.len() < episodes {
        let (rollout, records) =
            collect_rollout(&policy, world, cfg, shaping, &mut rng, episodes - log.len(), log.len(), observer)?;
        log.extend(records);
        let adv = compute_advantages(&rollout, cfg.gamma)?;
        if rollout.len() >= cfg.minibatch_size {
            ppo_update(&mut policy, &mut opt, &rollout, &adv, cfg, &mut rng)?;
        }
    }
    Ok(log)
}
