//! DDPG and PPO agents with one-step-lookahead (Lyapunov-style) reward shaping,
//! trained on a deterministic 2D LiDAR obstacle-avoidance navigation task.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the double-precision instantiation used by the experiment harness.

pub mod ddpg;
pub mod envsim;
pub mod episode;
pub mod error;
pub mod harness;
pub mod neural;
pub mod ppo;
pub mod scalar;
pub mod shaping;

pub use error::TrainError;
pub use scalar::Real;

pub type Mlp = neural::Mlp<f64>;
pub type GradientSet = neural::GradientSet<f64>;
pub type AdamState = neural::AdamState<f64>;
pub type World = envsim::World<f64>;
pub type Observation = envsim::Observation<f64>;
pub type ShapingConfig = shaping::ShapingConfig<f64>;
pub type DdpgAgent = ddpg::DdpgAgent<f64>;
pub type DdpgConfig = ddpg::DdpgConfig<f64>;
pub type GaussianPolicy = ppo::GaussianPolicy<f64>;
pub type PpoConfig = ppo::PpoConfig<f64>;
pub type EpisodeRecord = episode::EpisodeRecord<f64>;
