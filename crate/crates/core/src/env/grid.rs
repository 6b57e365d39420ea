//! Grid world where agents collect goals while avoiding hazard cells.
//!
//! Costs: `hazard_cost` for standing on a hazard, `adjacent_cost` for standing
//! next to one (8-neighbourhood). Reward is shared: every agent receives the
//! total goal bonus captured by the team this step.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Action, ActionSpace, EnvSpec, MultiAgentEnv, ResetOutcome, StepOutcome};
use crate::error::{Error, Result};

/// Stay, then the eight compass moves.
const MOVES: [(i64, i64); 9] = [
    (0, 0),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HazardGoalsConfig {
    pub n_agents: usize,
    pub horizon: usize,
    pub width: usize,
    pub height: usize,
    pub n_goals: usize,
    pub n_hazards: usize,
    pub goal_bonus: f64,
    pub hazard_cost: f64,
    pub adjacent_cost: f64,
}

impl Default for HazardGoalsConfig {
    fn default() -> Self {
        Self {
            n_agents: 2,
            horizon: 200,
            width: 10,
            height: 10,
            n_goals: 2,
            n_hazards: 5,
            goal_bonus: 1.0,
            hazard_cost: 1.0,
            adjacent_cost: 0.25,
        }
    }
}

impl HazardGoalsConfig {
    pub fn obs_dim(&self) -> usize {
        2 + 2 * self.n_goals + 9 + 2 * (self.n_agents - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.n_agents > 8 {
            return Err(Error::config("env.n_agents", "must be in 1..=8"));
        }
        if self.horizon == 0 {
            return Err(Error::config("env.horizon", "must be at least 1"));
        }
        if self.width < 3 || self.height < 3 {
            return Err(Error::config("env.width", "grid must be at least 3x3"));
        }
        if self.n_goals == 0 {
            return Err(Error::config("env.n_goals", "must be positive"));
        }
        // Every hazard can rule out at most nine spawn cells.
        let cells = self.width * self.height;
        if 9 * self.n_hazards + self.n_agents + self.n_goals + self.n_agents > cells {
            return Err(Error::config("env.n_hazards", "too many hazards for the grid"));
        }
        for (field, v) in [
            ("env.goal_bonus", self.goal_bonus),
            ("env.hazard_cost", self.hazard_cost),
            ("env.adjacent_cost", self.adjacent_cost),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be nonnegative and finite"));
            }
        }
        if !(self.goal_bonus > 0.0) {
            return Err(Error::config("env.goal_bonus", "must be positive"));
        }
        Ok(())
    }
}

type Cell = (usize, usize);

pub struct HazardGoalsEnv {
    cfg: HazardGoalsConfig,
    spec: EnvSpec,
    rng: ChaCha8Rng,
    agents: Vec<Cell>,
    goals: Vec<Cell>,
    hazard: Vec<bool>,
    t: usize,
    episode: Option<u64>,
    finished: bool,
}

impl HazardGoalsEnv {
    pub fn new(cfg: HazardGoalsConfig, cost_budget: f64) -> Result<Self> {
        cfg.validate()?;
        let spec = EnvSpec {
            n_agents: cfg.n_agents,
            obs_dim: cfg.obs_dim(),
            action_space: ActionSpace::Discrete { n_actions: 9 },
            horizon: cfg.horizon,
            cost_budget,
        };
        spec.validate()?;
        let mut env = Self {
            hazard: vec![false; cfg.width * cfg.height],
            spec,
            cfg,
            rng: ChaCha8Rng::seed_from_u64(0),
            agents: Vec::new(),
            goals: Vec::new(),
            t: 0,
            episode: None,
            finished: false,
        };
        env.reset(0);
        env.episode = None;
        Ok(env)
    }

    pub fn agents(&self) -> &[Cell] {
        &self.agents
    }

    pub fn goals(&self) -> &[Cell] {
        &self.goals
    }

    pub fn hazards(&self) -> Vec<Cell> {
        self.all_cells().filter(|&c| self.is_hazard(c)).collect()
    }

    /// Overwrites the layout. Cells are `(x, y)`.
    pub fn set_layout(&mut self, agents: &[Cell], goals: &[Cell], hazards: &[Cell]) -> Result<()> {
        if agents.len() != self.cfg.n_agents {
            return Err(Error::shape("grid agents", self.cfg.n_agents, agents.len()));
        }
        if goals.len() != self.cfg.n_goals {
            return Err(Error::shape("grid goals", self.cfg.n_goals, goals.len()));
        }
        let inside = |&(x, y): &Cell| x < self.cfg.width && y < self.cfg.height;
        if !agents.iter().chain(goals).chain(hazards).all(inside) {
            return Err(Error::config("layout", "cell outside the grid"));
        }
        self.hazard.iter_mut().for_each(|h| *h = false);
        for &c in hazards {
            let idx = self.index(c);
            self.hazard[idx] = true;
        }
        self.agents = agents.to_vec();
        self.goals = goals.to_vec();
        Ok(())
    }

    fn index(&self, (x, y): Cell) -> usize {
        y * self.cfg.width + x
    }

    fn is_hazard(&self, c: Cell) -> bool {
        self.hazard[self.index(c)]
    }

    fn all_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.cfg.height).flat_map(move |y| (0..self.cfg.width).map(move |x| (x, y)))
    }

    fn offset(&self, (x, y): Cell, (dx, dy): (i64, i64)) -> Option<Cell> {
        let nx = x as i64 + dx;
        let ny = y as i64 + dy;
        (nx >= 0 && ny >= 0 && (nx as usize) < self.cfg.width && (ny as usize) < self.cfg.height)
            .then_some((nx as usize, ny as usize))
    }

    fn near_hazard(&self, c: Cell) -> bool {
        MOVES[1..]
            .iter()
            .filter_map(|&m| self.offset(c, m))
            .any(|n| self.is_hazard(n))
    }

    fn layout(&mut self) {
        let mut cells: Vec<Cell> = self.all_cells().collect();
        cells.shuffle(&mut self.rng);
        self.hazard.iter_mut().for_each(|h| *h = false);
        for &c in &cells[..self.cfg.n_hazards] {
            let idx = self.index(c);
            self.hazard[idx] = true;
        }
        let rest = &cells[self.cfg.n_hazards..];
        let safe: Vec<Cell> = rest
            .iter()
            .copied()
            .filter(|&c| !self.near_hazard(c))
            .collect();
        // Validation guarantees enough hazard-free, hazard-distant cells.
        self.agents = safe[..self.cfg.n_agents].to_vec();
        self.goals = rest
            .iter()
            .copied()
            .filter(|c| !self.agents.contains(c))
            .take(self.cfg.n_goals)
            .collect();
        self.t = 0;
        self.finished = false;
        self.episode = Some(self.episode.map_or(0, |e| e + 1));
    }

    fn resample_goal(&mut self, slot: usize) {
        let free: Vec<Cell> = self
            .all_cells()
            .filter(|&c| !self.is_hazard(c) && !self.agents.contains(&c) && !self.goals.contains(&c))
            .collect();
        if let Some(&c) = free.choose(&mut self.rng) {
            self.goals[slot] = c;
        }
    }

    fn observe(&self) -> Vec<Vec<f64>> {
        let (w, h) = (self.cfg.width as f64, self.cfg.height as f64);
        let norm = |c: Cell| (2.0 * c.0 as f64 / (w - 1.0) - 1.0, 2.0 * c.1 as f64 / (h - 1.0) - 1.0);
        self.agents
            .iter()
            .enumerate()
            .map(|(i, &me)| {
                let mut o = Vec::with_capacity(self.cfg.obs_dim());
                let (px, py) = norm(me);
                o.extend([px, py]);
                for &g in &self.goals {
                    o.push((g.0 as f64 - me.0 as f64) / w);
                    o.push((g.1 as f64 - me.1 as f64) / h);
                }
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let bit = self.offset(me, (dx, dy)).is_some_and(|c| self.is_hazard(c));
                        o.push(if bit { 1.0 } else { 0.0 });
                    }
                }
                for (j, &other) in self.agents.iter().enumerate() {
                    if j != i {
                        o.push((other.0 as f64 - me.0 as f64) / w);
                        o.push((other.1 as f64 - me.1 as f64) / h);
                    }
                }
                o
            })
            .collect()
    }
}

impl MultiAgentEnv for HazardGoalsEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> ResetOutcome {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.reset_next()
    }

    fn reset_next(&mut self) -> ResetOutcome {
        self.layout();
        ResetOutcome {
            observations: self.observe(),
            episode_id: self.episode.unwrap_or(0),
        }
    }

    fn step(&mut self, actions: &[Action]) -> Result<StepOutcome> {
        if self.finished {
            return Err(Error::EpisodeFinished);
        }
        if actions.len() != self.cfg.n_agents {
            return Err(Error::shape("joint action", self.cfg.n_agents, actions.len()));
        }
        for (i, a) in actions.iter().enumerate() {
            self.spec.action_space.validate(i, a)?;
        }
        for (i, a) in actions.iter().enumerate() {
            let Action::Discrete(k) = *a else { unreachable!("validated") };
            if let Some(c) = self.offset(self.agents[i], MOVES[k]) {
                self.agents[i] = c;
            }
        }
        let mut bonus = 0.0;
        for i in 0..self.agents.len() {
            if let Some(slot) = self.goals.iter().position(|&g| g == self.agents[i]) {
                bonus += self.cfg.goal_bonus;
                self.resample_goal(slot);
            }
        }
        let costs = self
            .agents
            .iter()
            .map(|&c| {
                if self.is_hazard(c) {
                    self.cfg.hazard_cost
                } else if self.near_hazard(c) {
                    self.cfg.adjacent_cost
                } else {
                    0.0
                }
            })
            .collect();
        self.t += 1;
        let truncated = self.t >= self.cfg.horizon;
        self.finished = truncated;
        Ok(StepOutcome {
            next_obs: self.observe(),
            rewards: vec![bonus; self.cfg.n_agents],
            costs,
            terminated: false,
            truncated,
        })
    }

    fn step_count(&self) -> usize {
        self.t
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        self.observe()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn env() -> HazardGoalsEnv {
        HazardGoalsEnv::new(HazardGoalsConfig::default(), 25.0).unwrap()
    }

    #[test]
    fn reset_layout_is_disjoint_and_spawns_are_safe() {
        let mut e = env();
        for seed in 0..200 {
            e.reset(seed);
            let hazards = e.hazards();
            assert_eq!(hazards.len(), 5);
            for a in e.agents() {
                assert!(!hazards.contains(a));
                assert!(!e.goals().contains(a));
                assert!(!e.near_hazard(*a));
            }
            for g in e.goals() {
                assert!(!hazards.contains(g));
            }
            assert_eq!(e.observations()[0].len(), e.spec().obs_dim);
        }
    }

    #[test]
    fn goal_capture_pays_bonus_and_resamples() {
        let mut e = env();
        e.reset(0);
        e.set_layout(&[(2, 2), (8, 8)], &[(3, 2), (0, 9)], &[(6, 0)]).unwrap();
        // Agent 0 moves east (action 3) onto the goal; agent 1 stays.
        let out = e.step(&[Action::Discrete(3), Action::Discrete(0)]).unwrap();
        assert_eq!(out.rewards, vec![1.0, 1.0]);
        assert_eq!(e.agents()[0], (3, 2));
        assert_ne!(e.goals()[0], (3, 2));
        assert_eq!(e.goals()[1], (0, 9));
        assert!(!e.hazards().contains(&e.goals()[0]));
        assert_eq!(out.costs, vec![0.0, 0.0]);
    }

    #[test]
    fn reward_only_on_capture() {
        let mut e = env();
        e.reset(0);
        e.set_layout(&[(2, 2), (8, 8)], &[(5, 5), (0, 9)], &[(6, 0)]).unwrap();
        let out = e.step(&[Action::Discrete(3), Action::Discrete(5)]).unwrap();
        assert_eq!(out.rewards, vec![0.0, 0.0]);
    }

    #[test]
    fn hazard_and_adjacency_costs() {
        let mut e = env();
        e.reset(0);
        e.set_layout(&[(4, 4), (0, 0)], &[(9, 9), (9, 8)], &[(5, 4), (1, 1)]).unwrap();
        let out = e.step(&[Action::Discrete(3), Action::Discrete(0)]).unwrap();
        // Agent 0 stepped onto a hazard; agent 1 sits next to one.
        assert_eq!(out.costs, vec![1.0, 0.25]);
    }

    #[test]
    fn moves_clamp_at_the_border() {
        let mut e = env();
        e.reset(0);
        e.set_layout(&[(0, 0), (9, 9)], &[(5, 5), (4, 4)], &[]).unwrap();
        e.step(&[Action::Discrete(6), Action::Discrete(2)]).unwrap();
        assert_eq!(e.agents(), &[(0, 0), (9, 9)]);
    }

    #[test]
    fn invalid_action_rejected() {
        let mut e = env();
        e.reset(0);
        assert!(e.step(&[Action::Discrete(9), Action::Discrete(0)]).is_err());
        assert!(e.step(&[Action::Discrete(0)]).is_err());
    }

    #[test]
    fn idle_costs_nothing() {
        let mut e = env();
        for seed in 0..20 {
            e.reset(seed);
            loop {
                let out = e.step(&[Action::Discrete(0), Action::Discrete(0)]).unwrap();
                assert_eq!(out.costs, vec![0.0, 0.0]);
                assert_eq!(out.rewards, vec![0.0, 0.0]);
                if out.done() {
                    break;
                }
            }
        }
    }

    #[test]
    fn determinism_and_nonnegative_costs() {
        let run = || {
            let mut e = env();
            e.reset(5);
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut traj = Vec::new();
            for _ in 0..10_000 {
                let a = vec![Action::Discrete(rng.random_range(0..9)), Action::Discrete(rng.random_range(0..9))];
                let out = e.step(&a).unwrap();
                assert!(out.costs.iter().all(|&c| c >= 0.0));
                if out.done() {
                    e.reset_next();
                }
                traj.push(out);
            }
            traj
        };
        assert_eq!(run(), run());
    }
}
