//! Per-instance shared memory.
//!
//! Each environment instance keeps one current entry per agent. An entry is
//! readable only while its write bit is set. Readers score the active entries
//! of other agents by cosine similarity to their own state summary and
//! concatenate the `k` best into a fixed-length, zero-padded context.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cosine-similarity stabiliser.
pub const COSINE_EPS: f64 = 1e-8;

/// Writes happen only on strictly exceeding the threshold.
#[inline]
pub fn gate(p: f64, tau: f64) -> bool {
    p > tau
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlackboardEntry {
    /// State summary, also the retrieval key.
    pub x: Vec<f64>,
    /// Intent.
    pub u: Vec<f64>,
    /// Yield flag in `[0, 1]`.
    pub y: f64,
    /// Hazard probability in `[0, 1]`.
    pub p: f64,
    pub w: bool,
    pub env: usize,
    pub agent: usize,
}

impl BlackboardEntry {
    /// Width of `[x; u; y; p]` for message dimension `d_msg`.
    pub fn slot_width(d_msg: usize) -> usize {
        2 * d_msg + 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.len() != self.u.len() {
            return Err(Error::shape("entry intent", self.x.len(), self.u.len()));
        }
        if !self.x.iter().chain(&self.u).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("blackboard entry".into()));
        }
        if !(0.0..=1.0).contains(&self.y) || !(0.0..=1.0).contains(&self.p) {
            return Err(Error::NonFinite("blackboard entry y/p outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Appends `[x; u; y; p]`.
    pub fn write_psi(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.x);
        out.extend_from_slice(&self.u);
        out.push(self.y);
        out.push(self.p);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryContext {
    /// `k` slots of width `2 d_msg + 2`; slots past `occupancy` are zero.
    pub data: Vec<f64>,
    pub occupancy: usize,
    /// Retrieved agent ids in rank order.
    pub senders: Vec<usize>,
}

impl MemoryContext {
    pub fn zeros(k: usize, d_msg: usize) -> Self {
        Self {
            data: vec![0.0; k * BlackboardEntry::slot_width(d_msg)],
            occupancy: 0,
            senders: Vec::new(),
        }
    }
}

/// Read/write instrumentation, used to prove ablations skip the board.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BoardCounters {
    pub writes: u64,
    pub reads: u64,
    pub clears: u64,
}

/// Boards for all `E` instances of a vectorized runner.
#[derive(Debug, Clone)]
pub struct Blackboard {
    d_msg: usize,
    boards: Vec<Vec<Option<BlackboardEntry>>>,
    counters: BoardCounters,
}

impl Blackboard {
    pub fn new(num_envs: usize, n_agents: usize, d_msg: usize) -> Self {
        Self {
            d_msg,
            boards: vec![vec![None; n_agents]; num_envs],
            counters: BoardCounters::default(),
        }
    }

    pub fn d_msg(&self) -> usize {
        self.d_msg
    }

    pub fn counters(&self) -> BoardCounters {
        self.counters
    }

    pub fn entry(&self, env: usize, agent: usize) -> Option<&BlackboardEntry> {
        self.boards[env][agent].as_ref()
    }

    /// Stores `entry` as the single current entry of its owner. Entries with
    /// `w = false` are kept but never returned by reads.
    pub fn write(&mut self, entry: BlackboardEntry) -> Result<()> {
        entry.validate()?;
        if entry.x.len() != self.d_msg {
            return Err(Error::shape("entry state summary", self.d_msg, entry.x.len()));
        }
        let slot = self
            .boards
            .get_mut(entry.env)
            .and_then(|b| b.get_mut(entry.agent))
            .ok_or_else(|| Error::config("blackboard", "entry owner out of range"))?;
        *slot = Some(entry);
        self.counters.writes += 1;
        Ok(())
    }

    pub fn clear(&mut self, env: usize) {
        self.boards[env].iter_mut().for_each(|e| *e = None);
        self.counters.clears += 1;
    }

    /// Top-`k` retrieval for `reader` in instance `env`, ranked by cosine
    /// similarity of each active peer's `x` to `query`, ties broken by
    /// ascending agent id.
    pub fn read_topk(&mut self, env: usize, reader: usize, query: &[f64], k: usize) -> Result<MemoryContext> {
        if query.len() != self.d_msg {
            return Err(Error::shape("read query", self.d_msg, query.len()));
        }
        if !query.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("read query".into()));
        }
        self.counters.reads += 1;
        let q_norm = norm(query) + COSINE_EPS;
        let mut scored: Vec<(f64, usize)> = self.boards[env]
            .iter()
            .enumerate()
            .filter_map(|(j, e)| e.as_ref().filter(|e| e.w && j != reader).map(|e| (j, e)))
            .map(|(j, e)| {
                let x_norm = norm(&e.x) + COSINE_EPS;
                let dot: f64 = e.x.iter().zip(query).map(|(a, b)| (a / x_norm) * (b / q_norm)).sum();
                (dot, j)
            })
            .collect();
        // Scores are finite; `partial_cmp` also equates 0.0 and -0.0.
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite scores").then(a.1.cmp(&b.1)));
        scored.truncate(k);

        let width = BlackboardEntry::slot_width(self.d_msg);
        let mut data = Vec::with_capacity(k * width);
        let senders: Vec<usize> = scored.iter().map(|&(_, j)| j).collect();
        for &j in &senders {
            self.boards[env][j].as_ref().expect("scored entries exist").write_psi(&mut data);
        }
        data.resize(k * width, 0.0);
        Ok(MemoryContext {
            data,
            occupancy: senders.len(),
            senders,
        })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Adaptive write-threshold controller: an EMA of the observed write rate
/// drives `tau` toward the rate `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState {
    pub tau: f64,
    pub rate_ema: f64,
    pub beta: f64,
    pub eta: f64,
    pub target: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub adaptive: bool,
}

impl ThresholdState {
    /// Starts the EMA at the target rate.
    pub fn new(tau0: f64, target: f64, eta: f64, beta: f64, bounds: (f64, f64), adaptive: bool) -> Self {
        Self {
            tau: tau0.clamp(bounds.0, bounds.1),
            rate_ema: target,
            beta,
            eta,
            target,
            tau_min: bounds.0,
            tau_max: bounds.1,
            adaptive,
        }
    }

    /// One controller step from the write rate observed this timestep.
    pub fn update(&mut self, rate: f64) {
        if !self.adaptive {
            return;
        }
        let rate = rate.clamp(0.0, 1.0);
        self.rate_ema = (self.beta * self.rate_ema + (1.0 - self.beta) * rate).clamp(0.0, 1.0);
        self.tau = (self.tau + self.eta * (self.rate_ema - self.target)).clamp(self.tau_min, self.tau_max);
    }
}
