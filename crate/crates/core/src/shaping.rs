//! Lyapunov-style reward shaping.
//!
//! The transform replaces a step reward `r_t` with
//!
//! ```text
//! r_t + eta * (gamma * r_{t+1} - r_t)
//! ```
//!
//! i.e. it blends the current reward with the discounted reward of the next
//! step. The shaped stream is fed unchanged into the standard TD target
//! (DDPG critic) and the finite-horizon advantage estimator (PPO), with the
//! learned critics estimating shaped-return values. Past the last step of an
//! episode the successor reward is taken to be zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapingError {
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),
    #[error("reward sequence is empty")]
    EmptySequence,
    #[error("length mismatch: {rewards} rewards need {} values, got {values}", rewards + 1)]
    LengthMismatch { rewards: usize, values: usize },
    #[error("shaping.{field} = {value} outside {range}")]
    OutOfRange { field: &'static str, value: f64, range: &'static str },
}

pub type Result<T> = std::result::Result<T, ShapingError>;

/// `eta` weights the shaped term, `gamma` is the discount used inside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapingConfig<T> {
    pub enabled: bool,
    pub eta: T,
    pub gamma: T,
}

impl<T: Real> Default for ShapingConfig<T> {
    fn default() -> Self {
        Self { enabled: true, eta: T::lit(0.4), gamma: T::lit(0.99) }
    }
}

impl<T: Real> ShapingConfig<T> {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= T::zero() && self.eta <= T::one()) {
            return Err(ShapingError::OutOfRange { field: "eta", value: self.eta.as_f64(), range: "[0, 1]" });
        }
        if !(self.gamma > T::zero() && self.gamma <= T::one()) {
            return Err(ShapingError::OutOfRange { field: "gamma", value: self.gamma.as_f64(), range: "(0, 1]" });
        }
        Ok(())
    }
}

/// `r_current + eta * (gamma * r_next - r_current)`.
pub fn shape_reward<T: Real>(r_current: T, r_next: T, cfg: &ShapingConfig<T>) -> Result<T> {
    if !(r_current.is_finite() && r_next.is_finite()) {
        return Err(ShapingError::NonFinite("shape_reward"));
    }
    Ok(r_current + cfg.eta * (cfg.gamma * r_next - r_current))
}

/// Shapes one episode's reward stream; the final element sees a zero successor.
/// Returns the input unchanged when shaping is disabled.
pub fn shape_trajectory<T: Real>(rewards: &[T], cfg: &ShapingConfig<T>) -> Result<Vec<T>> {
    if rewards.is_empty() {
        return Err(ShapingError::EmptySequence);
    }
    if !cfg.enabled {
        return Ok(rewards.to_vec());
    }
    rewards
        .iter()
        .enumerate()
        .map(|(t, &r)| {
            let next = rewards.get(t + 1).copied().unwrap_or_else(T::zero);
            shape_reward(r, next, cfg)
        })
        .collect()
}

/// One-step bootstrap target `r_next + gamma * value_next`, with the bootstrap dropped on `done`.
pub fn shaped_td_target<T: Real>(r_next: T, value_next: T, done: bool, gamma: T) -> Result<T> {
    if !(r_next.is_finite() && gamma.is_finite()) || (!done && !value_next.is_finite()) {
        return Err(ShapingError::NonFinite("shaped_td_target"));
    }
    if done {
        Ok(r_next)
    } else {
        Ok(r_next + gamma * value_next)
    }
}

/// Finite-horizon advantages
/// `A_t = -V(s_t) + sum_{k=t}^{T-1} gamma^{k-t} r_k + gamma^{T-t} V(s_T)`
/// for every `t`. `values` carries `T + 1` entries, the last being the
/// bootstrap value (zero for a terminal segment end).
pub fn shaped_advantages<T: Real>(rewards: &[T], values: &[T], gamma: T) -> Result<Vec<T>> {
    if values.len() != rewards.len() + 1 {
        return Err(ShapingError::LengthMismatch { rewards: rewards.len(), values: values.len() });
    }
    let n = rewards.len();
    let mut out = vec![T::zero(); n];
    // Discounted return-to-go, accumulated backwards from the bootstrap value.
    let mut ret = values[n];
    for t in (0..n).rev() {
        ret = rewards[t] + gamma * ret;
        out[t] = ret - values[t];
    }
    Ok(out)
}
