//! Evaluation metrics over checkpoints.
//!
//! Feasibility is non-strict (`C <= d`); a violation is strict (`C > d`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deterministic evaluation at one training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCheckpoint {
    pub step: u64,
    pub mean_return: f64,
    pub mean_cost: f64,
    /// Per-episode `(R, C)`. May be empty when loaded from a summary file.
    #[serde(default)]
    pub episodes: Vec<(f64, f64)>,
    pub n_episodes: usize,
    pub violations: usize,
}

impl EvalCheckpoint {
    pub fn from_episodes(step: u64, episodes: Vec<(f64, f64)>, budget: f64) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::Ragged("checkpoint without episodes".into()));
        }
        let n = episodes.len() as f64;
        let mean_return = episodes.iter().map(|e| e.0).sum::<f64>() / n;
        let mean_cost = episodes.iter().map(|e| e.1).sum::<f64>() / n;
        let violations = episodes.iter().filter(|e| e.1 > budget).count();
        Ok(Self {
            step,
            mean_return,
            mean_cost,
            n_episodes: episodes.len(),
            episodes,
            violations,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub r_final: f64,
    pub c_final: f64,
    pub c_peak: f64,
    pub violation_rate: f64,
    /// Absent when no checkpoint meets the budget.
    pub r_feas: Option<f64>,
    pub time_to_feasible: Option<u64>,
    /// `R_final` if `C_final <= d`, else zero.
    pub feasible_indicator: f64,
    pub budget: f64,
    pub n_checkpoints: usize,
    pub n_episodes: usize,
}

/// Team return and cost of one complete episode: per-step agent means,
/// summed over time. Inputs are indexed `[t][agent]`.
pub fn episodic_aggregate(rewards: &[Vec<f64>], costs: &[Vec<f64>]) -> Result<(f64, f64)> {
    if rewards.len() != costs.len() {
        return Err(Error::Ragged(format!("{} reward steps vs {} cost steps", rewards.len(), costs.len())));
    }
    let n = rewards.first().map_or(0, Vec::len);
    if n == 0 {
        return Err(Error::Ragged("episode without agents".into()));
    }
    let mut r_total = 0.0;
    let mut c_total = 0.0;
    for (t, (r, c)) in rewards.iter().zip(costs).enumerate() {
        if r.len() != n || c.len() != n {
            return Err(Error::Ragged(format!("step {t} has {} rewards and {} costs for {n} agents", r.len(), c.len())));
        }
        r_total += r.iter().sum::<f64>() / n as f64;
        c_total += c.iter().sum::<f64>() / n as f64;
    }
    Ok((r_total, c_total))
}

pub fn feasible_return(checkpoints: &[EvalCheckpoint], budget: f64) -> Option<f64> {
    checkpoints
        .iter()
        .filter(|c| c.mean_cost <= budget)
        .map(|c| c.mean_return)
        .reduce(f64::max)
}

pub fn peak_cost(checkpoints: &[EvalCheckpoint]) -> f64 {
    checkpoints.iter().map(|c| c.mean_cost).fold(f64::NEG_INFINITY, f64::max)
}

pub fn violation_rate(episode_costs: &[f64], budget: f64) -> f64 {
    if episode_costs.is_empty() {
        return 0.0;
    }
    episode_costs.iter().filter(|&&c| c > budget).count() as f64 / episode_costs.len() as f64
}

pub fn time_to_feasible(checkpoints: &[EvalCheckpoint], budget: f64) -> Option<u64> {
    checkpoints.iter().filter(|c| c.mean_cost <= budget).map(|c| c.step).min()
}

pub fn feasible_indicator(ret: f64, cost: f64, budget: f64) -> f64 {
    if cost <= budget {
        ret
    } else {
        0.0
    }
}

/// All metrics for a checkpoint series ordered by training step.
pub fn report(checkpoints: &[EvalCheckpoint], budget: f64) -> Result<MetricsReport> {
    let last = checkpoints
        .iter()
        .max_by_key(|c| c.step)
        .ok_or_else(|| Error::Ragged("no checkpoints".into()))?;
    let n_episodes: usize = checkpoints.iter().map(|c| c.n_episodes).sum();
    let violations: usize = checkpoints.iter().map(|c| c.violations).sum();
    Ok(MetricsReport {
        r_final: last.mean_return,
        c_final: last.mean_cost,
        c_peak: peak_cost(checkpoints),
        violation_rate: if n_episodes == 0 { 0.0 } else { violations as f64 / n_episodes as f64 },
        r_feas: feasible_return(checkpoints, budget),
        time_to_feasible: time_to_feasible(checkpoints, budget),
        feasible_indicator: feasible_indicator(last.mean_return, last.mean_cost, budget),
        budget,
        n_checkpoints: checkpoints.len(),
        n_episodes,
    })
}
