//! Independent reference implementations shared by the integration suites.
#![allow(dead_code)]

use lyapnav::envsim::{Circle, RobotPose, World, LIDAR_BEAMS};
use lyapnav::ppo::clipped_loss;
use lyapnav::shaping::{shape_trajectory, ShapingConfig};
use rand::Rng;

pub mod checks;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely: with function values
/// around 10 and a 1e-5 step, central-difference roundoff alone is ~1e-10.
pub const FD_FLOOR: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Central difference of `f` at `x`.
pub fn central_diff(x: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

// ---- LiDAR ----

fn inside_any(p: [f64; 2], world: &World<f64>) -> bool {
    let h = world.arena_half_extent;
    if p[0].abs() >= h || p[1].abs() >= h {
        return true;
    }
    world.obstacles.iter().any(|c| (p[0] - c.center[0]).hypot(p[1] - c.center[1]) <= c.radius)
}

/// Marches each beam in 1 mm increments and reports the first blocked sample.
pub fn ray_march_scan(pose: &RobotPose<f64>, world: &World<f64>) -> [f64; LIDAR_BEAMS] {
    const DS: f64 = 1e-3;
    std::array::from_fn(|k| {
        let a = pose.heading + std::f64::consts::TAU * k as f64 / LIDAR_BEAMS as f64;
        let (c, s) = (a.cos(), a.sin());
        let mut d = 0.0;
        while d < world.lidar_max_range {
            if inside_any([pose.x + d * c, pose.y + d * s], world) {
                return d;
            }
            d += DS;
        }
        world.lidar_max_range
    })
}

/// Random arena with 0..5 obstacles and a robot centre outside all of them.
pub fn random_scene<R: Rng>(rng: &mut R) -> (World<f64>, RobotPose<f64>) {
    let mut world = World::default();
    world.arena_half_extent = rng.random_range(1.0..3.0);
    world.lidar_max_range = rng.random_range(0.5..5.0);
    let h = world.arena_half_extent;
    world.obstacles = (0..rng.random_range(0..=5))
        .map(|_| Circle {
            center: [rng.random_range(-h..h), rng.random_range(-h..h)],
            radius: rng.random_range(0.05..0.5),
        })
        .collect();
    loop {
        let pose = RobotPose {
            x: rng.random_range(-h * 0.95..h * 0.95),
            y: rng.random_range(-h * 0.95..h * 0.95),
            heading: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        };
        let clear =
            world.obstacles.iter().all(|c| (pose.x - c.center[0]).hypot(pose.y - c.center[1]) > c.radius + 0.01);
        if clear {
            return (world, pose);
        }
    }
}

// ---- advantages ----

/// `-V_t + sum_{k=t}^{T-1} gamma^(k-t) r_k + gamma^(T-t) V_T`, summed term by term.
pub fn brute_force_advantages(rewards: &[f64], values: &[f64], gamma: f64) -> Vec<f64> {
    let t_len = rewards.len();
    (0..t_len)
        .map(|t| {
            let mut acc = -values[t];
            for (k, r) in rewards.iter().enumerate().skip(t) {
                acc += gamma.powi((k - t) as i32) * r;
            }
            acc + gamma.powi((t_len - t) as i32) * values[t_len]
        })
        .collect()
}

// ---- clipped surrogate ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    Below,
    Inside,
    Above,
}

pub fn band(ratio: f64, eps: f64) -> Band {
    if ratio < 1.0 - eps {
        Band::Below
    } else if ratio > 1.0 + eps {
        Band::Above
    } else {
        Band::Inside
    }
}

/// Case table for `min(rA, clip(r) A)`.
pub fn clipped_case(ratio: f64, adv: f64, eps: f64) -> f64 {
    match (band(ratio, eps), adv >= 0.0) {
        (Band::Inside, _) => ratio * adv,
        (Band::Below, true) => ratio * adv,
        (Band::Below, false) => (1.0 - eps) * adv,
        (Band::Above, true) => (1.0 + eps) * adv,
        (Band::Above, false) => ratio * adv,
    }
}

/// One representative per (band, sign) cell: (ratio, advantage, expected).
pub fn clip_case_table(eps: f64) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    for ratio in [0.5, 1.05, 1.6] {
        for adv in [2.0, -2.0] {
            out.push((ratio, adv, clipped_case(ratio, adv, eps)));
        }
    }
    out
}

pub fn check_clip_cases(eps: f64) -> Result<(), String> {
    for (r, a, want) in clip_case_table(eps) {
        let got = clipped_loss(r, a, eps).map_err(|e| e.to_string())?;
        if got != want {
            return Err(format!("clipped_loss({r}, {a}) = {got}, expected {want}"));
        }
    }
    Ok(())
}

// ---- tabular chain ----

/// Deterministic five-state chain. State 4 is the absorbing goal; `right`
/// from 3 enters it for +10. Every other move costs 1. With `cliff`, `left`
/// from state 0 ends the episode immediately for +7; otherwise it stays put.
#[derive(Debug, Clone, Copy)]
pub struct Chain {
    pub cliff: bool,
}

pub const CHAIN_STATES: usize = 5;
pub const CHAIN_GOAL: usize = 4;
pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

impl Chain {
    /// (next state, reward, terminal)
    pub fn step(&self, s: usize, a: usize) -> (usize, f64, bool) {
        match (s, a) {
            (3, RIGHT) => (CHAIN_GOAL, 10.0, true),
            (_, RIGHT) => (s + 1, -1.0, false),
            (0, _) if self.cliff => (CHAIN_GOAL, 7.0, true),
            (0, _) => (0, -1.0, false),
            _ => (s - 1, -1.0, false),
        }
    }

    /// Value iteration. Without shaping this is the usual Bellman optimality
    /// backup. With shaping the reward of each step is
    /// `(1 - eta) r + eta * gamma * r_next`, so the backup also looks one
    /// action ahead:
    /// `Q(s,a) = (1 - eta) R(s,a) + gamma * max_a' [eta R(s',a') + Q(s',a')]`.
    pub fn value_iteration(&self, gamma: f64, eta: Option<f64>) -> [[f64; 2]; CHAIN_STATES] {
        let eta = eta.unwrap_or(0.0);
        let mut q = [[0.0; 2]; CHAIN_STATES];
        for _ in 0..10_000 {
            let mut next = q;
            let mut delta: f64 = 0.0;
            for s in 0..CHAIN_GOAL {
                for a in [LEFT, RIGHT] {
                    let (s2, r, done) = self.step(s, a);
                    let cont = if done {
                        0.0
                    } else {
                        [LEFT, RIGHT]
                            .iter()
                            .map(|&a2| eta * self.step(s2, a2).1 + q[s2][a2])
                            .fold(f64::NEG_INFINITY, f64::max)
                    };
                    next[s][a] = (1.0 - eta) * r + gamma * cont;
                    delta = delta.max((next[s][a] - q[s][a]).abs());
                }
            }
            q = next;
            if delta < 1e-13 {
                break;
            }
        }
        q
    }

    /// Exhaustive search over every action sequence that reaches a terminal
    /// state within `max_len` steps. Returns, per non-goal start state, the
    /// best discounted return and the first action achieving it (ties keep
    /// the earlier sequence). Shaped returns come from `shape_trajectory`.
    pub fn brute_force(&self, gamma: f64, shaping: Option<&ShapingConfig<f64>>, max_len: usize) -> Vec<(f64, usize)> {
        (0..CHAIN_GOAL)
            .map(|s0| {
                let mut best = (f64::NEG_INFINITY, usize::MAX);
                for len in 1..=max_len {
                    for code in 0..(1u64 << len) {
                        let mut s = s0;
                        let mut rewards = Vec::with_capacity(len);
                        let mut finished = false;
                        for i in 0..len {
                            let a = ((code >> i) & 1) as usize;
                            let (s2, r, done) = self.step(s, a);
                            rewards.push(r);
                            s = s2;
                            if done {
                                finished = i + 1 == len;
                                break;
                            }
                        }
                        if !finished {
                            continue;
                        }
                        let stream = match shaping {
                            Some(cfg) => shape_trajectory(&rewards, cfg).expect("valid shaping"),
                            None => rewards,
                        };
                        let ret: f64 = stream.iter().enumerate().map(|(k, r)| gamma.powi(k as i32) * r).sum();
                        if ret > best.0 + 1e-12 {
                            best = (ret, (code & 1) as usize);
                        }
                    }
                }
                best
            })
            .collect()
    }
}

pub fn greedy(q: &[[f64; 2]; CHAIN_STATES]) -> Vec<usize> {
    q[..CHAIN_GOAL].iter().map(|row| if row[RIGHT] >= row[LEFT] { RIGHT } else { LEFT }).collect()
}

/// Result of comparing raw and shaped greedy policies on one chain variant.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainFinding {
    pub raw_policy: Vec<usize>,
    pub shaped_policy: Vec<usize>,
    /// Largest |VI value - brute-force value| over both reward streams.
    pub oracle_gap: f64,
    pub vi_matches_oracle: bool,
}

pub fn chain_finding(chain: Chain, gamma: f64, eta: f64) -> ChainFinding {
    let shaping = ShapingConfig { enabled: true, eta, gamma };
    let q_raw = chain.value_iteration(gamma, None);
    let q_shaped = chain.value_iteration(gamma, Some(eta));
    let bf_raw = chain.brute_force(gamma, None, 12);
    let bf_shaped = chain.brute_force(gamma, Some(&shaping), 12);
    let raw_policy = greedy(&q_raw);
    let shaped_policy = greedy(&q_shaped);
    let mut gap: f64 = 0.0;
    let mut agree = true;
    for s in 0..CHAIN_GOAL {
        let v_raw = q_raw[s][raw_policy[s]];
        let v_shaped = q_shaped[s][shaped_policy[s]];
        gap = gap.max((v_raw - bf_raw[s].0).abs()).max((v_shaped - bf_shaped[s].0).abs());
        agree &= raw_policy[s] == bf_raw[s].1 && shaped_policy[s] == bf_shaped[s].1;
    }
    ChainFinding { raw_policy, shaped_policy, oracle_gap: gap, vi_matches_oracle: agree }
}

/// Follows a stationary policy from `s0` for at most `limit` steps.
pub fn rollout_policy(chain: Chain, policy: &[usize], s0: usize, limit: usize) -> (bool, usize) {
    let mut s = s0;
    for i in 0..limit {
        let (s2, _, done) = chain.step(s, policy[s]);
        if done {
            return (s2 == CHAIN_GOAL, i + 1);
        }
        s = s2;
    }
    (false, limit)
}
