//! Hazard events and lookahead labels.
//!
//! Labels need future costs, so they are built after a rollout is collected.
//! Windows never cross an episode boundary or the end of the recorded
//! sequence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardLabelConfig {
    /// Cost threshold; an event fires on strictly exceeding it.
    pub delta: f64,
    /// Lookahead horizon in steps.
    pub horizon: usize,
}

impl Default for HazardLabelConfig {
    fn default() -> Self {
        Self { delta: 0.1, horizon: 8 }
    }
}

impl HazardLabelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::config("hazard.delta", "must be positive"));
        }
        Ok(())
    }
}

/// Event and lookahead bits for one agent's time series.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HazardLabels {
    pub z: Vec<bool>,
    pub h: Vec<bool>,
}

#[inline]
pub fn instantaneous(cost: f64, delta: f64) -> bool {
    cost > delta
}

/// `h[t]` is set iff some `z[s]` is set for `s` in `[t, t + horizon]`, with
/// the window cut after the first `episode_end[s]` at or past `t`.
///
/// `episode_end[t]` marks `t` as the last step of its episode.
pub fn lookahead(z: &[bool], horizon: usize, episode_end: &[bool]) -> Result<Vec<bool>> {
    if z.len() != episode_end.len() {
        return Err(Error::shape("boundary mask", z.len(), episode_end.len()));
    }
    // Backward sweep: distance to the next event within the current episode.
    let mut h = vec![false; z.len()];
    let mut next_event: Option<usize> = None;
    for t in (0..z.len()).rev() {
        if episode_end[t] {
            next_event = None;
        }
        if z[t] {
            next_event = Some(t);
        }
        h[t] = next_event.is_some_and(|s| s - t <= horizon);
    }
    Ok(h)
}

pub fn label(costs: &[f64], episode_end: &[bool], cfg: &HazardLabelConfig) -> Result<HazardLabels> {
    let z: Vec<bool> = costs.iter().map(|&c| instantaneous(c, cfg.delta)).collect();
    let h = lookahead(&z, cfg.horizon, episode_end)?;
    Ok(HazardLabels { z, h })
}
