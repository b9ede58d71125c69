//! Criterion checks shared by the focused suites and the acceptance report.

use std::fs;

use lyapnav::ddpg::{train_ddpg, DdpgAgent, DdpgConfig, Transition};
use lyapnav::envsim::{kinematics_update, lidar_scan, Action, Env, RobotPose, Terminal, World, LIDAR_BEAMS, STATE_DIM};
use lyapnav::episode::EpisodeRecord;
use lyapnav::harness::{run_experiment, ExperimentConfig};
use lyapnav::neural::{Activation, Mlp, Trace};
use lyapnav::ppo::{
    clipped_loss, collect_rollout, ppo_loss_and_grad, train_ppo, GaussianPolicy, LossSample, PpoConfig,
};
use lyapnav::shaping::{shaped_advantages, ShapingConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{brute_force_advantages, central_diff, clipped_case, random_scene, ray_march_scan, rel_err};

pub const TRIALS: usize = 100;
pub const LIDAR_SCENES: usize = 1000;
pub const LIDAR_TOL: f64 = 2e-3;
pub const ADVANTAGE_SEQUENCES: usize = 1000;
pub const ADVANTAGE_TOL: f64 = 1e-10;
pub const CLIP_PAIRS: usize = 10_000;
pub const IDENTITY_EPISODES: usize = 50;

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn worst(pairs: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    pairs.into_iter().map(|(a, n)| rel_err(a, n)).fold(0.0, f64::max)
}

/// Worst relative error over all parameters and inputs of `upstream . mlp(x)`.
/// Instances with a relu pre-activation within reach of the finite step are redrawn.
pub fn mlp_trial(rng: &mut ChaCha8Rng) -> f64 {
    let acts = [Activation::Identity, Activation::Tanh, Activation::Relu];
    let (net, x, up) = loop {
        let depth = rng.random_range(1..=3);
        let mut sizes = vec![rng.random_range(1..=5)];
        for _ in 0..depth {
            sizes.push(rng.random_range(1..=5));
        }
        let hidden = acts[rng.random_range(0..3)];
        let output = acts[rng.random_range(0..3)];
        let mut net = Mlp::<f64>::init(&sizes, hidden, output, rng.random()).unwrap();
        for p in net.params_mut() {
            *p = rng.random_range(-1.5..1.5);
        }
        let x = random_vec(rng, sizes[0], 2.0);
        let up = random_vec(rng, *sizes.last().unwrap(), 1.0);
        if !near_relu_kink(&net, &x, 1e-3) {
            break (net, x, up);
        }
    };
    let (grads, input_grad) = net.backward(&x, &up).unwrap();
    let f = |net: &Mlp<f64>, x: &[f64]| -> f64 { net.forward(x).unwrap().iter().zip(&up).map(|(y, u)| y * u).sum() };

    let mut pairs = Vec::new();
    for (i, &a) in grads.values().enumerate() {
        let mut probe = net.clone();
        let base = *probe.params().nth(i).unwrap();
        let num = central_diff(base, |v| {
            *probe.params_mut().nth(i).unwrap() = v;
            f(&probe, &x)
        });
        pairs.push((a, num));
    }
    for (i, &a) in input_grad.iter().enumerate() {
        let mut xx = x.clone();
        let base = xx[i];
        let num = central_diff(base, |v| {
            xx[i] = v;
            f(&net, &xx)
        });
        pairs.push((a, num));
    }
    worst(pairs)
}

/// True if any pre-activation of a relu layer sits within `margin` of zero.
pub fn near_relu_kink(net: &Mlp<f64>, x: &[f64], margin: f64) -> bool {
    let mut trace = Trace::default();
    net.forward_trace(x, &mut trace).unwrap();
    for l in 0..net.num_layers() {
        let act = if l + 1 == net.num_layers() { net.output_activation() } else { net.hidden_activation() };
        if act != Activation::Relu {
            continue;
        }
        let (w, b) = net.layer(l);
        let input = &trace.activations[l];
        for (j, bj) in b.iter().enumerate() {
            let z: f64 =
                bj + w[j * input.len()..(j + 1) * input.len()].iter().zip(input).map(|(a, c)| a * c).sum::<f64>();
            if z.abs() < margin {
                return true;
            }
        }
    }
    false
}

pub fn small_ddpg() -> DdpgAgent<f64> {
    let cfg = DdpgConfig { hidden_sizes: vec![6, 5], ..DdpgConfig::default() };
    DdpgAgent::new(&cfg, 11).unwrap()
}

pub fn random_transition(rng: &mut ChaCha8Rng) -> Transition<f64> {
    Transition {
        state: random_vec(rng, STATE_DIM, 2.0),
        action: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        reward: rng.random_range(-1.0..1.0),
        shaped_reward: rng.random_range(-1.0..1.0),
        next_state: random_vec(rng, STATE_DIM, 2.0),
        done: rng.random_bool(0.2),
    }
}

/// Worst relative error of the actor objective gradient over every actor parameter.
pub fn ddpg_actor_trial(rng: &mut ChaCha8Rng) -> f64 {
    let mut agent = small_ddpg();
    for p in agent.actor.params_mut().chain(agent.critic.params_mut()) {
        *p = rng.random_range(-0.8..0.8);
    }
    let owned: Vec<Transition<f64>> = (0..3).map(|_| random_transition(rng)).collect();
    let batch: Vec<&Transition<f64>> = owned.iter().collect();
    let (_, grads) = agent.actor_loss_and_grad(&batch).unwrap();
    let analytic: Vec<f64> = grads.values().copied().collect();
    let mut pairs = Vec::new();
    for (i, &a) in analytic.iter().enumerate() {
        let mut probe = agent.clone();
        let base = *probe.actor.params().nth(i).unwrap();
        let num = central_diff(base, |v| {
            *probe.actor.params_mut().nth(i).unwrap() = v;
            probe.actor_loss_and_grad(&batch).unwrap().0
        });
        pairs.push((a, num));
    }
    worst(pairs)
}

pub fn small_policy(rng: &mut ChaCha8Rng) -> (GaussianPolicy<f64>, PpoConfig<f64>) {
    let cfg = PpoConfig { hidden_sizes: vec![5, 4], entropy_coeff: 0.01, value_coeff: 0.5, ..PpoConfig::default() };
    let mut policy = GaussianPolicy::new(&cfg, rng.random()).unwrap();
    for p in policy.mean_net.params_mut().chain(policy.value_net.params_mut()) {
        *p = rng.random_range(-0.8..0.8);
    }
    policy.log_std = [rng.random_range(-1.0..0.5), rng.random_range(-1.0..0.5)];
    (policy, cfg)
}

/// Worst relative error of the combined PPO loss gradient over mean-net,
/// log-std and value-net parameters. Samples whose ratio lies within 1e-3 of
/// a clip boundary are redrawn so the finite step never crosses a kink.
pub fn ppo_loss_trial(rng: &mut ChaCha8Rng) -> f64 {
    let (policy, cfg) = small_policy(rng);
    let eps = cfg.clip_epsilon;
    let mut owned = Vec::new();
    while owned.len() < 4 {
        let state = random_vec(rng, STATE_DIM, 2.0);
        let action = random_vec(rng, 2, 1.5);
        let lp = policy.log_prob(&state, &action).unwrap();
        let log_prob_old = lp - rng.random_range(-0.5f64..0.5);
        let ratio = (lp - log_prob_old).exp();
        if ((ratio - (1.0 - eps)).abs()) < 1e-3 || ((ratio - (1.0 + eps)).abs()) < 1e-3 {
            continue;
        }
        owned.push(OwnedSample {
            state,
            action,
            log_prob_old,
            advantage: rng.random_range(-2.0..2.0),
            value_target: rng.random_range(-2.0..2.0),
        });
    }
    let batch: Vec<LossSample<'_, f64>> = owned
        .iter()
        .map(|s| LossSample {
            state: &s.state,
            action: &s.action,
            log_prob_old: s.log_prob_old,
            advantage: s.advantage,
            value_target: s.value_target,
        })
        .collect();
    let (_, grads) = ppo_loss_and_grad(&policy, &batch, &cfg).unwrap();
    let total = |p: &GaussianPolicy<f64>| ppo_loss_and_grad(p, &batch, &cfg).unwrap().0.total;

    let mut pairs = Vec::new();
    for (i, &a) in grads.mean.values().enumerate() {
        let mut probe = policy.clone();
        let base = *probe.mean_net.params().nth(i).unwrap();
        let num = central_diff(base, |x| {
            *probe.mean_net.params_mut().nth(i).unwrap() = x;
            total(&probe)
        });
        pairs.push((a, num));
    }
    for j in 0..2 {
        let mut probe = policy.clone();
        let base = probe.log_std[j];
        let num = central_diff(base, |x| {
            probe.log_std[j] = x;
            total(&probe)
        });
        pairs.push((grads.log_std[j], num));
    }
    for (i, &a) in grads.value.values().enumerate() {
        let mut probe = policy.clone();
        let base = *probe.value_net.params().nth(i).unwrap();
        let num = central_diff(base, |x| {
            *probe.value_net.params_mut().nth(i).unwrap() = x;
            total(&probe)
        });
        pairs.push((a, num));
    }
    worst(pairs)
}

/// Worst relative error of `log_prob_grad` over mean-net parameters and log-std.
pub fn log_prob_trial(rng: &mut ChaCha8Rng) -> f64 {
    let (policy, _) = small_policy(rng);
    let state = random_vec(rng, STATE_DIM, 2.0);
    let action = random_vec(rng, 2, 1.5);
    let (g_mean, g_log_std) = policy.log_prob_grad(&state, &action).unwrap();
    let mut pairs = Vec::new();
    for (i, &a) in g_mean.values().enumerate() {
        let mut probe = policy.clone();
        let base = *probe.mean_net.params().nth(i).unwrap();
        let num = central_diff(base, |x| {
            *probe.mean_net.params_mut().nth(i).unwrap() = x;
            probe.log_prob(&state, &action).unwrap()
        });
        pairs.push((a, num));
    }
    for j in 0..2 {
        let mut probe = policy.clone();
        let base = probe.log_std[j];
        let num = central_diff(base, |x| {
            probe.log_std[j] = x;
            probe.log_prob(&state, &action).unwrap()
        });
        pairs.push((g_log_std[j], num));
    }
    worst(pairs)
}

/// Worst relative error over `TRIALS` seeded trials.
pub fn run_suite(seed: u64, trial: fn(&mut ChaCha8Rng) -> f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..TRIALS).map(|_| trial(&mut rng)).fold(0.0, f64::max)
}

pub struct OwnedSample {
    state: Vec<f64>,
    action: Vec<f64>,
    log_prob_old: f64,
    advantage: f64,
    value_target: f64,
}

/// Largest |analytic - ray march| over `LIDAR_SCENES` random scenes.
pub fn lidar_worst_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..LIDAR_SCENES {
        let (world, pose) = random_scene(&mut rng);
        let fast = lidar_scan(&pose, &world);
        let slow = ray_march_scan(&pose, &world);
        for k in 0..LIDAR_BEAMS {
            worst = worst.max((fast[k] - slow[k]).abs());
        }
    }
    worst
}

/// Distance from the start after one full turn split into 100 Euler sub-steps.
pub fn circle_closure_error() -> f64 {
    let start = RobotPose { x: 0.3, y: -0.2, heading: 0.7 };
    let action = Action::new(1.0, std::f64::consts::TAU);
    let mut pose = start;
    for _ in 0..100 {
        pose = kinematics_update(pose, action, 0.01, 100.0).unwrap();
    }
    (pose.x - start.x).hypot(pose.y - start.y)
}

pub fn open_world() -> World<f64> {
    let mut w = World::default();
    w.arena_half_extent = 20.0;
    w.obstacles.clear();
    w.goal = [19.0, 19.0];
    w
}

/// Runs 500 seeded random-action steps and returns every pose, reward and terminal.
pub fn trajectory(world: &World<f64>, seed: u64) -> Vec<(RobotPose<f64>, f64, Terminal)> {
    let (mut env, _) = Env::new(world, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut out = Vec::new();
    for _ in 0..500 {
        let u = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let res = env.step(Action::from_normalized(&u, world)).unwrap();
        out.push((env.pose(), res.reward, res.terminal));
        if res.terminal.is_done() {
            break;
        }
    }
    out
}

pub fn trajectories_bit_identical(seed: u64) -> bool {
    let world = open_world();
    let a = trajectory(&world, seed);
    let b = trajectory(&world, seed);
    let same = a.len() == b.len()
        && a.iter().zip(&b).all(|(x, y)| {
            x.0.x.to_bits() == y.0.x.to_bits()
                && x.0.y.to_bits() == y.0.y.to_bits()
                && x.0.heading.to_bits() == y.0.heading.to_bits()
                && x.1.to_bits() == y.1.to_bits()
                && x.2 == y.2
        });
    same && a.len() == 500 && a[499].2 == Terminal::TimedOut
}

/// Largest |recursion - brute force| over random sequences with T <= 64.
pub fn advantage_worst_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..ADVANTAGE_SEQUENCES {
        let t = rng.random_range(1..=64);
        let gamma = rng.random_range(0.0..=1.0);
        let rewards: Vec<f64> = (0..t).map(|_| rng.random_range(-10.0..10.0)).collect();
        let values: Vec<f64> = (0..=t).map(|_| rng.random_range(-10.0..10.0)).collect();
        let fast = shaped_advantages(&rewards, &values, gamma).unwrap();
        let slow = brute_force_advantages(&rewards, &values, gamma);
        for (a, b) in fast.iter().zip(&slow) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Counts random (ratio, advantage) pairs violating the case table or the
/// lower-bound property `clipped <= ratio * advantage`.
pub fn clip_random_violations(seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = 0.2;
    (0..CLIP_PAIRS)
        .filter(|_| {
            let ratio = rng.random_range(1e-3..3.0);
            let adv = rng.random_range(-5.0..5.0);
            let got = clipped_loss(ratio, adv, eps).unwrap();
            got > ratio * adv || got != clipped_case(ratio, adv, eps)
        })
        .count()
}

/// For A >= 0 the objective rises with the ratio up to 1 + eps and is flat
/// beyond; for A <= 0 it falls until 1 - eps is passed from above, flat below.
pub fn clip_sign_sweep_holds() -> bool {
    let eps = 0.2;
    let ratios: Vec<f64> = (1..=300).map(|i| i as f64 / 100.0).collect();
    [1.5, -1.5].iter().all(|&adv| {
        let ys: Vec<f64> = ratios.iter().map(|&r| clipped_loss(r, adv, eps).unwrap()).collect();
        ratios.windows(2).zip(ys.windows(2)).all(|(r, y)| {
            if adv > 0.0 {
                if r[0] >= 1.0 + eps {
                    y[1] == y[0]
                } else {
                    y[1] >= y[0]
                }
            } else if r[1] <= 1.0 - eps {
                y[1] == y[0]
            } else {
                y[1] <= y[0]
            }
        })
    })
}

pub fn small_ppo() -> PpoConfig<f64> {
    PpoConfig { horizon: 256, minibatch_size: 64, epochs: 2, ..PpoConfig::default() }
}

/// Largest |log ratio| over a fresh rollout evaluated by the policy that collected it.
pub fn fresh_rollout_max_log_ratio(seed: u64) -> f64 {
    let world = World::<f64>::default();
    let cfg = small_ppo();
    let policy = GaussianPolicy::new(&cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rollout, _) =
        collect_rollout(&policy, &world, &cfg, &ShapingConfig::default(), &mut rng, 100, 0, &mut |_| Ok(())).unwrap();
    rollout
        .steps
        .iter()
        .map(|s| (policy.log_prob(&s.state, &s.action).unwrap() - s.log_prob_old).abs())
        .fold(0.0, f64::max)
}

pub fn rewards_bits(log: &[EpisodeRecord<f64>]) -> Vec<(u64, usize, &'static str)> {
    log.iter().map(|r| (r.reward.to_bits(), r.steps, r.terminal.as_str())).collect()
}

/// Trains each algorithm twice, once with shaping disabled and once enabled
/// with eta = 0, and reports whether the logs agree bit for bit.
pub fn eta_zero_matches_disabled(seed: u64) -> (bool, bool) {
    let world = World::<f64>::default();
    let off = ShapingConfig::disabled();
    let zero = ShapingConfig { enabled: true, eta: 0.0, ..ShapingConfig::default() };
    let ddpg_cfg = DdpgConfig::default();
    let ppo_cfg = PpoConfig::default();
    let ddpg =
        |s: &ShapingConfig<f64>| train_ddpg(&world, &ddpg_cfg, s, IDENTITY_EPISODES, seed, &mut |_| Ok(())).unwrap();
    let ppo =
        |s: &ShapingConfig<f64>| train_ppo(&world, &ppo_cfg, s, IDENTITY_EPISODES, seed, &mut |_| Ok(())).unwrap();
    (rewards_bits(&ddpg(&off)) == rewards_bits(&ddpg(&zero)), rewards_bits(&ppo(&off)) == rewards_bits(&ppo(&zero)))
}

/// Runs `cfg` into two fresh directories and compares every CSV byte for byte.
pub fn reproducible_across_invocations(cfg: &ExperimentConfig) -> bool {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for dir in [a.path(), b.path()] {
        let mut c = cfg.clone();
        c.output_dir = dir.to_path_buf();
        let outs = run_experiment(&c).unwrap();
        files.push(outs.iter().map(|o| fs::read(&o.csv_path).unwrap()).collect::<Vec<_>>());
    }
    files[0] == files[1]
}
