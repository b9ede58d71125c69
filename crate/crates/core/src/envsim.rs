//! Deterministic 2D navigation task: a unicycle robot in a square arena with
//! cylindrical obstacles, a 24-beam 360 degree LiDAR and a circular goal.
//!
//! The agent-facing state is 26 numbers: the 24 beam ranges followed by the
//! distance and the heading-relative bearing to the goal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::Real;

pub const LIDAR_BEAMS: usize = 24;
pub const STATE_DIM: usize = LIDAR_BEAMS + 2;
pub const ACTION_DIM: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid world: {0}")]
    Config(String),
    #[error("non-finite action ({linear}, {angular})")]
    NonFiniteAction { linear: f64, angular: f64 },
    #[error("step called on a finished episode ({0:?})")]
    EpisodeOver(Terminal),
}

pub type Result<T> = std::result::Result<T, EnvError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle<T> {
    pub center: [T; 2],
    pub radius: T,
}

/// Reward scale parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig<T> {
    pub progress_scale: T,
    pub step_penalty: T,
    pub goal_bonus: T,
    pub collision_penalty: T,
}

impl<T: Real> Default for RewardConfig<T> {
    fn default() -> Self {
        Self {
            progress_scale: T::lit(10.0),
            step_penalty: T::lit(0.05),
            goal_bonus: T::lit(100.0),
            collision_penalty: T::lit(100.0),
        }
    }
}

/// Static task description. Immutable once validated.
#[derive(Debug, Clone, PartialEq)]
pub struct World<T> {
    pub arena_half_extent: T,
    pub obstacles: Vec<Circle<T>>,
    pub goal: [T; 2],
    pub goal_radius: T,
    pub robot_radius: T,
    pub collision_distance: T,
    pub max_steps_per_episode: usize,
    pub dt: T,
    pub spawn: RobotPose<T>,
    /// Half-width of the uniform heading perturbation applied on reset.
    pub heading_jitter: T,
    pub lidar_max_range: T,
    pub v_max: T,
    pub omega_max: T,
    pub reward: RewardConfig<T>,
}

impl<T: Real> Default for World<T> {
    /// 4 m x 4 m arena, four 0.15 m posts at (+-1, +-1), spawn and goal in opposite corners,
    /// TurtleBot 3 Burger velocity limits.
    fn default() -> Self {
        let l = T::lit;
        let post = |x: f64, y: f64| Circle { center: [l(x), l(y)], radius: l(0.15) };
        Self {
            arena_half_extent: l(2.0),
            obstacles: vec![post(1.0, 1.0), post(-1.0, 1.0), post(-1.0, -1.0), post(1.0, -1.0)],
            goal: [l(1.6), l(1.6)],
            goal_radius: l(0.2),
            robot_radius: l(0.105),
            collision_distance: l(0.12),
            max_steps_per_episode: 500,
            dt: l(0.1),
            spawn: RobotPose { x: l(-1.6), y: l(-1.6), heading: T::FRAC_PI_4() },
            heading_jitter: T::PI() / l(8.0),
            lidar_max_range: l(3.5),
            v_max: l(0.22),
            omega_max: l(2.84),
            reward: RewardConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotPose<T> {
    pub x: T,
    pub y: T,
    /// Radians in (-pi, pi].
    pub heading: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation<T> {
    pub lidar: [T; LIDAR_BEAMS],
    pub goal_distance: T,
    pub goal_bearing: T,
}

impl<T: Real> Observation<T> {
    pub fn to_vec(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(STATE_DIM);
        v.extend_from_slice(&self.lidar);
        v.push(self.goal_distance);
        v.push(self.goal_bearing);
        v
    }
}

/// Velocity command in physical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action<T> {
    pub linear_velocity: T,
    pub angular_velocity: T,
}

impl<T: Real> Action<T> {
    pub fn new(linear_velocity: T, angular_velocity: T) -> Self {
        Self { linear_velocity, angular_velocity }
    }

    pub fn clamped(self, world: &World<T>) -> Self {
        Self {
            linear_velocity: self.linear_velocity.max(T::zero()).min(world.v_max),
            angular_velocity: self.angular_velocity.max(-world.omega_max).min(world.omega_max),
        }
    }

    /// Maps a command in `[-1, 1]^2` onto the velocity bounds: `-1..1` spans
    /// `0..v_max` for the linear part and `-omega_max..omega_max` for the angular part.
    /// Inputs outside the unit box are clamped first.
    pub fn from_normalized(u: &[T], world: &World<T>) -> Self {
        let one = T::one();
        let c = |x: T| x.max(-one).min(one);
        let half = T::lit(0.5);
        Self { linear_velocity: (c(u[0]) + one) * half * world.v_max, angular_velocity: c(u[1]) * world.omega_max }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Terminal {
    Running,
    GoalReached,
    Collided,
    TimedOut,
}

impl Terminal {
    pub fn is_done(self) -> bool {
        self != Terminal::Running
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Terminal::Running => "running",
            Terminal::GoalReached => "goal_reached",
            Terminal::Collided => "collided",
            Terminal::TimedOut => "timed_out",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "running" => Terminal::Running,
            "goal_reached" => Terminal::GoalReached,
            "collided" => Terminal::Collided,
            "timed_out" => Terminal::TimedOut,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult<T> {
    pub observation: Observation<T>,
    pub reward: T,
    pub terminal: Terminal,
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle<T: Real>(a: T) -> T {
    let two_pi = T::TAU();
    let mut r = a % two_pi;
    if r < T::zero() {
        r += two_pi;
    }
    if r > T::PI() {
        r -= two_pi;
    }
    r
}

impl<T: Real> World<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EnvError::Config(m));
        let positive = [
            ("arena_half_extent", self.arena_half_extent),
            ("goal_radius", self.goal_radius),
            ("robot_radius", self.robot_radius),
            ("collision_distance", self.collision_distance),
            ("dt", self.dt),
            ("lidar_max_range", self.lidar_max_range),
            ("v_max", self.v_max),
            ("omega_max", self.omega_max),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > T::zero()) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.heading_jitter >= T::zero() && self.heading_jitter <= T::PI()) {
            return bad(format!("heading_jitter must lie in [0, pi], got {}", self.heading_jitter));
        }
        if self.max_steps_per_episode == 0 {
            return bad("max_steps_per_episode must be positive".into());
        }
        let h = self.arena_half_extent;
        let inside = |p: [T; 2]| p[0].abs() < h && p[1].abs() < h;
        for (i, o) in self.obstacles.iter().enumerate() {
            if !(o.radius > T::zero()) || !inside(o.center) {
                return bad(format!("obstacle {i} must have positive radius and lie inside the arena"));
            }
        }
        if !inside(self.goal) {
            return bad("goal lies outside the arena".into());
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            let gap = dist(self.goal, o.center) - o.radius;
            if gap < self.goal_radius + self.robot_radius {
                return bad(format!("goal too close to obstacle {i} (surface gap {gap})"));
            }
        }
        let spawn = [self.spawn.x, self.spawn.y];
        if !inside(spawn) {
            return bad("spawn pose lies outside the arena".into());
        }
        if self.clearance([self.spawn.x, self.spawn.y]) < self.collision_distance {
            return bad("spawn pose collides with an obstacle or wall".into());
        }
        Ok(())
    }

    /// Smallest distance from `p` to any obstacle surface or arena wall.
    pub fn clearance(&self, p: [T; 2]) -> T {
        let h = self.arena_half_extent;
        let walls = (h - p[0].abs()).min(h - p[1].abs());
        self.obstacles.iter().map(|o| dist(p, o.center) - o.radius).fold(walls, T::min)
    }

    pub fn observe(&self, pose: &RobotPose<T>) -> Observation<T> {
        let dx = self.goal[0] - pose.x;
        let dy = self.goal[1] - pose.y;
        Observation {
            lidar: lidar_scan(pose, self),
            goal_distance: dx.hypot(dy),
            goal_bearing: normalize_angle(dy.atan2(dx) - pose.heading),
        }
    }

    pub fn goal_distance(&self, pose: &RobotPose<T>) -> T {
        dist([pose.x, pose.y], self.goal)
    }
}

#[inline]
fn dist<T: Real>(a: [T; 2], b: [T; 2]) -> T {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Places the robot at the spawn pose with a seeded heading perturbation.
pub fn reset<T: Real>(world: &World<T>, seed: u64) -> Result<(RobotPose<T>, Observation<T>)> {
    world.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let j = world.heading_jitter.as_f64();
    let jitter = if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
    let pose = RobotPose {
        x: world.spawn.x,
        y: world.spawn.y,
        heading: normalize_angle(world.spawn.heading + T::lit(jitter)),
    };
    Ok((pose, world.observe(&pose)))
}

/// Unicycle Euler step. Position is clamped into the `[-half_extent, half_extent]^2` arena.
pub fn kinematics_update<T: Real>(
    pose: RobotPose<T>,
    action: Action<T>,
    dt: T,
    half_extent: T,
) -> Result<RobotPose<T>> {
    let (v, w) = (action.linear_velocity, action.angular_velocity);
    if !(v.is_finite() && w.is_finite()) {
        return Err(EnvError::NonFiniteAction { linear: v.as_f64(), angular: w.as_f64() });
    }
    let x = pose.x + v * dt * pose.heading.cos();
    let y = pose.y + v * dt * pose.heading.sin();
    Ok(RobotPose {
        x: x.max(-half_extent).min(half_extent),
        y: y.max(-half_extent).min(half_extent),
        heading: normalize_angle(pose.heading + w * dt),
    })
}

/// Distance along a unit ray to the first intersection with a circle, if any.
/// Origins inside the circle report zero.
fn ray_circle<T: Real>(origin: [T; 2], dir: [T; 2], c: &Circle<T>) -> Option<T> {
    let fx = origin[0] - c.center[0];
    let fy = origin[1] - c.center[1];
    let b = fx * dir[0] + fy * dir[1];
    let cc = fx * fx + fy * fy - c.radius * c.radius;
    if cc <= T::zero() {
        return Some(T::zero());
    }
    let disc = b * b - cc;
    if disc < T::zero() || b > T::zero() {
        return None;
    }
    Some(-b - disc.sqrt())
}

fn ray_walls<T: Real>(origin: [T; 2], dir: [T; 2], h: T) -> T {
    let mut best = T::infinity();
    for axis in 0..2 {
        let d = dir[axis];
        let t = if d > T::zero() {
            (h - origin[axis]) / d
        } else if d < T::zero() {
            (-h - origin[axis]) / d
        } else {
            continue;
        };
        best = best.min(t.max(T::zero()));
    }
    best
}

/// 360 degree scan; beam `k` points at `heading + 2*pi*k/24`.
pub fn lidar_scan<T: Real>(pose: &RobotPose<T>, world: &World<T>) -> [T; LIDAR_BEAMS] {
    let origin = [pose.x, pose.y];
    let step = T::TAU() / T::lit(LIDAR_BEAMS as f64);
    std::array::from_fn(|k| {
        let angle = pose.heading + step * T::lit(k as f64);
        let dir = [angle.cos(), angle.sin()];
        let wall = ray_walls(origin, dir, world.arena_half_extent);
        world.obstacles.iter().filter_map(|c| ray_circle(origin, dir, c)).fold(wall, T::min).min(world.lidar_max_range)
    })
}

/// Dense progress reward with a per-step penalty and terminal bonus/penalty.
pub fn reward_fn<T: Real>(prev_goal_distance: T, new_goal_distance: T, terminal: Terminal, cfg: &RewardConfig<T>) -> T {
    let mut r = cfg.progress_scale * (prev_goal_distance - new_goal_distance) - cfg.step_penalty;
    match terminal {
        Terminal::GoalReached => r += cfg.goal_bonus,
        Terminal::Collided => r -= cfg.collision_penalty,
        Terminal::Running | Terminal::TimedOut => {}
    }
    r
}

/// Advances one control period. `steps_elapsed` counts steps already taken this episode.
pub fn step<T: Real>(
    pose: RobotPose<T>,
    action: Action<T>,
    world: &World<T>,
    steps_elapsed: usize,
) -> Result<(RobotPose<T>, StepResult<T>)> {
    if steps_elapsed >= world.max_steps_per_episode {
        return Err(EnvError::EpisodeOver(Terminal::TimedOut));
    }
    let action = action.clamped(world);
    let prev = world.goal_distance(&pose);
    let next = kinematics_update(pose, action, world.dt, world.arena_half_extent)?;
    let new_dist = world.goal_distance(&next);
    let terminal = if world.clearance([next.x, next.y]) < world.collision_distance {
        Terminal::Collided
    } else if new_dist < world.goal_radius {
        Terminal::GoalReached
    } else if steps_elapsed + 1 >= world.max_steps_per_episode {
        Terminal::TimedOut
    } else {
        Terminal::Running
    };
    let reward = reward_fn(prev, new_dist, terminal, &world.reward);
    Ok((next, StepResult { observation: world.observe(&next), reward, terminal }))
}

/// Stateful episode wrapper around [`reset`] and [`step`].
#[derive(Debug, Clone)]
pub struct Env<'w, T> {
    world: &'w World<T>,
    pose: RobotPose<T>,
    steps: usize,
    status: Terminal,
}

impl<'w, T: Real> Env<'w, T> {
    pub fn new(world: &'w World<T>, seed: u64) -> Result<(Self, Observation<T>)> {
        let (pose, obs) = reset(world, seed)?;
        Ok((Self { world, pose, steps: 0, status: Terminal::Running }, obs))
    }

    pub fn reset(&mut self, seed: u64) -> Result<Observation<T>> {
        let (pose, obs) = reset(self.world, seed)?;
        self.pose = pose;
        self.steps = 0;
        self.status = Terminal::Running;
        Ok(obs)
    }

    pub fn step(&mut self, action: Action<T>) -> Result<StepResult<T>> {
        if self.status.is_done() {
            return Err(EnvError::EpisodeOver(self.status));
        }
        let (pose, res) = step(self.pose, action, self.world, self.steps)?;
        self.pose = pose;
        self.steps += 1;
        self.status = res.terminal;
        Ok(res)
    }

    pub fn pose(&self) -> RobotPose<T> {
        self.pose
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn world(&self) -> &'w World<T> {
        self.world
    }
}
