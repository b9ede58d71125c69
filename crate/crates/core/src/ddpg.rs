//! Deep deterministic policy gradient: deterministic actor, Q critic, soft
//! target copies of both, a uniform replay ring and Gaussian exploration.
//!
//! Actions are handled in the normalized box `[-1, 1]^2` (the actor's tanh
//! range) and mapped onto velocity bounds only when handed to the simulator.
//! Replay stores the normalized action the critic was trained on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::envsim::{Action, Env, Observation, World, ACTION_DIM, STATE_DIM};
use crate::episode::{EpisodeObserver, EpisodeRecord};
use crate::error::{Result, TrainError};
use crate::neural::{Activation, AdamConfig, AdamState, GradientSet, Mlp, Trace};
use crate::scalar::Real;
use crate::shaping::{shape_reward, shaped_td_target, ShapingConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct DdpgConfig<T> {
    pub hidden_sizes: Vec<usize>,
    pub actor_adam: AdamConfig<T>,
    pub critic_adam: AdamConfig<T>,
    pub tau: T,
    pub gamma: T,
    /// Exploration noise std in normalized action units (fraction of the half-range).
    pub noise_std: T,
    pub buffer_capacity: usize,
    pub warmup: usize,
    pub batch_size: usize,
}

impl<T: Real> Default for DdpgConfig<T> {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![64, 64],
            actor_adam: AdamConfig::default(),
            critic_adam: AdamConfig::default(),
            tau: T::lit(0.005),
            gamma: T::lit(0.99),
            noise_std: T::lit(0.1),
            buffer_capacity: 100_000,
            warmup: 1_000,
            batch_size: 32,
        }
    }
}

impl<T: Real> DdpgConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(TrainError::Config(m));
        if self.hidden_sizes.iter().any(|&h| h == 0) {
            return err(format!("ddpg.hidden_sizes must be positive, got {:?}", self.hidden_sizes));
        }
        if !(self.tau > T::zero() && self.tau <= T::one()) {
            return err(format!("ddpg.tau must lie in (0, 1], got {}", self.tau));
        }
        if !(self.gamma >= T::zero() && self.gamma <= T::one()) {
            return err(format!("ddpg.gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.noise_std >= T::zero() && self.noise_std.is_finite()) {
            return err(format!("ddpg.noise_std must be non-negative, got {}", self.noise_std));
        }
        if self.buffer_capacity == 0 || self.batch_size == 0 {
            return err("ddpg.buffer_capacity and ddpg.batch_size must be positive".into());
        }
        self.actor_adam.validate()?;
        self.critic_adam.validate()?;
        Ok(())
    }
}

/// One stored step. `action` is in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T> {
    pub state: Vec<T>,
    pub action: [T; ACTION_DIM],
    pub reward: T,
    pub shaped_reward: T,
    pub next_state: Vec<T>,
    pub done: bool,
}

/// Fixed-capacity ring; the oldest entry is overwritten once full.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    storage: Vec<Transition<T>>,
    write_index: usize,
}

impl<T: Real> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, storage: Vec::with_capacity(capacity.min(1 << 16)), write_index: 0 }
    }

    pub fn push(&mut self, t: Transition<T>) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.write_index] = t;
        }
        self.write_index = (self.write_index + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Slot indices drawn uniformly with replacement from the occupied region.
    pub fn sample_indices<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        if self.storage.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| rng.random_range(0..self.storage.len())).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<&Transition<T>> {
        self.sample_indices(rng, n).into_iter().map(|i| &self.storage[i]).collect()
    }

    pub fn get(&self, slot: usize) -> Option<&Transition<T>> {
        self.storage.get(slot)
    }

    /// Contents from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition<T>> + '_ {
        let split = if self.storage.len() < self.capacity { 0 } else { self.write_index };
        self.storage[split..].iter().chain(self.storage[..split].iter())
    }
}

#[derive(Debug, Clone)]
pub struct DdpgAgent<T> {
    pub actor: Mlp<T>,
    pub critic: Mlp<T>,
    pub target_actor: Mlp<T>,
    pub target_critic: Mlp<T>,
    pub actor_opt: AdamState<T>,
    pub critic_opt: AdamState<T>,
    pub noise_scale: T,
    pub tau: T,
    pub gamma: T,
}

fn critic_input<T: Real>(state: &[T], action: &[T], buf: &mut Vec<T>) {
    buf.clear();
    buf.extend_from_slice(state);
    buf.extend_from_slice(action);
}

impl<T: Real> DdpgAgent<T> {
    pub fn new(cfg: &DdpgConfig<T>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = |input: usize, output: usize| {
            let mut s = vec![input];
            s.extend_from_slice(&cfg.hidden_sizes);
            s.push(output);
            s
        };
        let actor = Mlp::init(&sizes(STATE_DIM, ACTION_DIM), Activation::Tanh, Activation::Tanh, rng.random())?;
        let critic =
            Mlp::init(&sizes(STATE_DIM + ACTION_DIM, 1), Activation::Tanh, Activation::Identity, rng.random())?;
        Ok(Self {
            actor_opt: AdamState::new(&actor, cfg.actor_adam)?,
            critic_opt: AdamState::new(&critic, cfg.critic_adam)?,
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            noise_scale: cfg.noise_std,
            tau: cfg.tau,
            gamma: cfg.gamma,
        })
    }

    /// Actor output in normalized units, optionally with clamped Gaussian exploration noise.
    pub fn select_normalized<R: Rng + ?Sized>(
        &self,
        state: &[T],
        explore: bool,
        rng: &mut R,
    ) -> Result<[T; ACTION_DIM]> {
        let out = self.actor.forward(state)?;
        let mut u = [out[0], out[1]];
        if explore && self.noise_scale > T::zero() {
            let normal = Normal::new(0.0, self.noise_scale.as_f64()).map_err(|e| TrainError::Config(e.to_string()))?;
            for x in &mut u {
                *x += T::lit(normal.sample(rng));
            }
        }
        for x in &mut u {
            *x = x.max(-T::one()).min(T::one());
        }
        Ok(u)
    }

    pub fn select_action<R: Rng + ?Sized>(
        &self,
        obs: &Observation<T>,
        world: &World<T>,
        explore: bool,
        rng: &mut R,
    ) -> Result<Action<T>> {
        let u = self.select_normalized(&obs.to_vec(), explore, rng)?;
        Ok(Action::from_normalized(&u, world))
    }

    /// Mean squared TD error over `batch` and its gradient with respect to the critic.
    pub fn critic_loss_and_grad(&self, batch: &[&Transition<T>], shaping_enabled: bool) -> Result<(T, GradientSet<T>)> {
        if batch.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        let n = T::lit(batch.len() as f64);
        let mut grads = self.critic.zero_gradients();
        let mut trace = Trace::default();
        let mut input = Vec::with_capacity(STATE_DIM + ACTION_DIM);
        let mut loss = T::zero();
        for tr in batch {
            let reward = if shaping_enabled { tr.shaped_reward } else { tr.reward };
            let bootstrap = if tr.done {
                T::zero()
            } else {
                let a_next = self.target_actor.forward(&tr.next_state)?;
                critic_input(&tr.next_state, &a_next, &mut input);
                self.target_critic.forward(&input)?[0]
            };
            let y = shaped_td_target(reward, bootstrap, tr.done, self.gamma)?;
            critic_input(&tr.state, &tr.action, &mut input);
            self.critic.forward_trace(&input, &mut trace)?;
            let diff = trace.output()[0] - y;
            loss += diff * diff / n;
            let up = [T::lit(2.0) * diff / n];
            self.critic.backward_accumulate(&trace, &up, T::one(), &mut grads, None)?;
        }
        Ok((loss, grads))
    }

    /// One Adam step on the critic; returns the loss before the step.
    pub fn critic_update(&mut self, batch: &[&Transition<T>], shaping_enabled: bool) -> Result<T> {
        let (loss, grads) = self.critic_loss_and_grad(batch, shaping_enabled)?;
        self.critic_opt.step(&mut self.critic, &grads)?;
        Ok(loss)
    }

    /// `-mean Q(s, mu(s))` over the batch states and its gradient with respect to the actor.
    pub fn actor_loss_and_grad(&self, batch: &[&Transition<T>]) -> Result<(T, GradientSet<T>)> {
        if batch.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        let n = T::lit(batch.len() as f64);
        let mut grads = self.actor.zero_gradients();
        let mut actor_trace = Trace::default();
        let mut critic_trace = Trace::default();
        let mut input = Vec::with_capacity(STATE_DIM + ACTION_DIM);
        let mut input_grad = vec![T::zero(); STATE_DIM + ACTION_DIM];
        let mut loss = T::zero();
        for tr in batch {
            self.actor.forward_trace(&tr.state, &mut actor_trace)?;
            critic_input(&tr.state, actor_trace.output(), &mut input);
            self.critic.forward_trace(&input, &mut critic_trace)?;
            loss -= critic_trace.output()[0] / n;
            let up = [-T::one() / n];
            self.critic.input_gradient(&critic_trace, &up, &mut input_grad)?;
            self.actor.backward_accumulate(&actor_trace, &input_grad[STATE_DIM..], T::one(), &mut grads, None)?;
        }
        Ok((loss, grads))
    }

    /// One Adam step ascending mean Q through the actor; the critic is left untouched.
    pub fn actor_update(&mut self, batch: &[&Transition<T>]) -> Result<T> {
        let (loss, grads) = self.actor_loss_and_grad(batch)?;
        self.actor_opt.step(&mut self.actor, &grads)?;
        Ok(loss)
    }

    pub fn update_targets(&mut self) -> Result<()> {
        self.target_actor.soft_update_from(&self.actor, self.tau)?;
        self.target_critic.soft_update_from(&self.critic, self.tau)?;
        Ok(())
    }
}

struct Pending<T> {
    state: Vec<T>,
    action: [T; ACTION_DIM],
    reward: T,
    next_state: Vec<T>,
    done: bool,
}

impl<T: Real> Pending<T> {
    fn finalize(self, r_next: T, shaping: &ShapingConfig<T>) -> Result<Transition<T>> {
        let shaped_reward = if shaping.enabled { shape_reward(self.reward, r_next, shaping)? } else { self.reward };
        Ok(Transition {
            state: self.state,
            action: self.action,
            reward: self.reward,
            shaped_reward,
            next_state: self.next_state,
            done: self.done,
        })
    }
}

/// Full training loop. Each transition is committed to replay one step late,
/// once the successor reward needed for shaping is known; an episode's last
/// transition is committed with a zero successor reward.
pub fn train_ddpg<T: Real>(
    world: &World<T>,
    cfg: &DdpgConfig<T>,
    shaping: &ShapingConfig<T>,
    episodes: usize,
    seed: u64,
    observer: &mut EpisodeObserver<'_, T>,
) -> Result<Vec<EpisodeRecord<T>>> {
    cfg.validate()?;
    shaping.validate()?;
    world.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = DdpgAgent::new(cfg, rng.random())?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut log = Vec::with_capacity(episodes);
    let warm = cfg.warmup.max(cfg.batch_size);

    for episode in 0..episodes {
        let (mut env, obs) = Env::new(world, rng.random())?;
        let mut state = obs.to_vec();
        let mut pending: Option<Pending<T>> = None;
        let mut total = T::zero();
        loop {
            let u = agent.select_normalized(&state, true, &mut rng)?;
            let res = env.step(Action::from_normalized(&u, world))?;
            total += res.reward;
            let next_state = res.observation.to_vec();
            if let Some(p) = pending.take() {
                buffer.push(p.finalize(res.reward, shaping)?);
            }
            let current = Pending {
                state: std::mem::replace(&mut state, next_state.clone()),
                action: u,
                reward: res.reward,
                next_state,
                done: matches!(res.terminal, crate::envsim::Terminal::GoalReached | crate::envsim::Terminal::Collided),
            };
            if res.terminal.is_done() {
                buffer.push(current.finalize(T::zero(), shaping)?);
            } else {
                pending = Some(current);
            }

            if buffer.len() >= warm {
                let batch = buffer.sample(&mut rng, cfg.batch_size);
                agent.critic_update(&batch, shaping.enabled)?;
                agent.actor_update(&batch)?;
                agent.update_targets()?;
            }

            if res.terminal.is_done() {
                let rec = EpisodeRecord { episode, reward: total, steps: env.steps(), terminal: res.terminal };
                observer(&rec).map_err(TrainError::Aborted)?;
                log.push(rec);
                break;
            }
        }
    }
    Ok(log)
}
