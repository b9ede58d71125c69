//! Per-episode bookkeeping shared by both learners.

use crate::envsim::Terminal;

/// Outcome of one training episode. `reward` is always the sum of *raw*
/// environment rewards, whatever shaping the learner used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord<T> {
    pub episode: usize,
    pub reward: T,
    pub steps: usize,
    pub terminal: Terminal,
}

/// Error type a per-episode observer may return to stop training early.
pub type ObserverError = Box<dyn std::error::Error + Send + Sync>;

/// Called once per finished episode, in order.
pub type EpisodeObserver<'a, T> = dyn FnMut(&EpisodeRecord<T>) -> Result<(), ObserverError> + 'a;
