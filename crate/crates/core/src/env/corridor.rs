//! Agents accelerate along a walled strip, tracking a target forward speed
//! while holding the centre line. Contact with a wall or entering another
//! agent's proximity radius costs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Action, ActionSpace, EnvSpec, MultiAgentEnv, ResetOutcome, StepOutcome};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorridorConfig {
    pub n_agents: usize,
    pub horizon: usize,
    /// Lateral extent; walls at `y = 0` and `y = width`.
    pub width: f64,
    pub length: f64,
    pub target_speed: f64,
    pub proximity_radius: f64,
    /// Distance from a wall that counts as touching it.
    pub wall_margin: f64,
    pub max_accel: f64,
    pub drag: f64,
    pub dt: f64,
    /// Weight of the centre-line term in the shared reward.
    pub lane_weight: f64,
    pub proximity_cost: f64,
    pub wall_cost: f64,
    /// Half-width of the uniform jitter applied to spawn positions.
    pub spawn_jitter: f64,
}

impl Default for CorridorConfig {
    fn default() -> Self {
        Self {
            n_agents: 2,
            horizon: 200,
            width: 2.0,
            length: 100.0,
            target_speed: 1.0,
            proximity_radius: 0.5,
            wall_margin: 0.05,
            max_accel: 1.0,
            drag: 0.5,
            dt: 0.1,
            lane_weight: 0.5,
            proximity_cost: 1.0,
            wall_cost: 1.0,
            spawn_jitter: 0.1,
        }
    }
}

impl CorridorConfig {
    pub fn obs_dim(&self) -> usize {
        3 + 4 * (self.n_agents - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("env.width", self.width),
            ("env.length", self.length),
            ("env.target_speed", self.target_speed),
            ("env.proximity_radius", self.proximity_radius),
            ("env.max_accel", self.max_accel),
            ("env.dt", self.dt),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be positive and finite"));
            }
        }
        let nonneg = [
            ("env.wall_margin", self.wall_margin),
            ("env.drag", self.drag),
            ("env.lane_weight", self.lane_weight),
            ("env.proximity_cost", self.proximity_cost),
            ("env.wall_cost", self.wall_cost),
            ("env.spawn_jitter", self.spawn_jitter),
        ];
        for (field, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be nonnegative and finite"));
            }
        }
        if self.n_agents == 0 || self.n_agents > 8 {
            return Err(Error::config("env.n_agents", "must be in 1..=8"));
        }
        if self.horizon == 0 {
            return Err(Error::config("env.horizon", "must be at least 1"));
        }
        if 2.0 * self.wall_margin >= self.width {
            return Err(Error::config("env.wall_margin", "walls overlap"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Body {
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
}

pub struct CorridorVelocityEnv {
    cfg: CorridorConfig,
    spec: EnvSpec,
    rng: ChaCha8Rng,
    bodies: Vec<Body>,
    t: usize,
    episode: Option<u64>,
    finished: bool,
}

impl CorridorVelocityEnv {
    pub fn new(cfg: CorridorConfig, cost_budget: f64) -> Result<Self> {
        cfg.validate()?;
        let spec = EnvSpec {
            n_agents: cfg.n_agents,
            obs_dim: cfg.obs_dim(),
            action_space: ActionSpace::Continuous {
                act_dim: 2,
                low: -1.0,
                high: 1.0,
            },
            horizon: cfg.horizon,
            cost_budget,
        };
        spec.validate()?;
        let mut env = Self {
            bodies: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(0),
            spec,
            cfg,
            t: 0,
            episode: None,
            finished: false,
        };
        env.reset(0);
        env.episode = None;
        Ok(env)
    }

    /// Overwrites positions and velocities, `(x, y, vx, vy)` per agent.
    /// Positions are clamped into the strip.
    pub fn set_state(&mut self, state: &[(f64, f64, f64, f64)]) -> Result<()> {
        if state.len() != self.cfg.n_agents {
            return Err(Error::shape("corridor state", self.cfg.n_agents, state.len()));
        }
        for (b, &(x, y, vx, vy)) in self.bodies.iter_mut().zip(state) {
            *b = Body {
                x: x.clamp(0.0, self.cfg.length),
                y: y.clamp(0.0, self.cfg.width),
                vx,
                vy,
            };
        }
        Ok(())
    }

    pub fn positions(&self) -> Vec<(f64, f64)> {
        self.bodies.iter().map(|b| (b.x, b.y)).collect()
    }

    fn spawn(&mut self) {
        let cfg = &self.cfg;
        let n = cfg.n_agents;
        let jitter = cfg.spawn_jitter;
        self.bodies = (0..n)
            .map(|i| {
                let lane = cfg.width * (i as f64 + 0.5) / n as f64;
                let jx = if jitter > 0.0 { self.rng.random_range(0.0..=2.0 * jitter) } else { 0.0 };
                let jy = if jitter > 0.0 { self.rng.random_range(-jitter..=jitter) } else { 0.0 };
                Body {
                    x: jx,
                    y: (lane + jy).clamp(0.0, cfg.width),
                    vx: 0.0,
                    vy: 0.0,
                }
            })
            .collect();
        self.t = 0;
        self.finished = false;
        self.episode = Some(self.episode.map_or(0, |e| e + 1));
    }

    fn observe(&self) -> Vec<Vec<f64>> {
        let cfg = &self.cfg;
        let half = cfg.width / 2.0;
        self.bodies
            .iter()
            .enumerate()
            .map(|(i, me)| {
                let mut o = Vec::with_capacity(cfg.obs_dim());
                o.push((me.y - half) / half);
                o.push(me.vx - cfg.target_speed);
                o.push(me.vy);
                for (j, other) in self.bodies.iter().enumerate() {
                    if j == i {
                        continue;
                    }
                    o.push((other.x - me.x).clamp(-3.0, 3.0));
                    o.push(other.y - me.y);
                    o.push(other.vx - me.vx);
                    o.push(other.vy - me.vy);
                }
                o
            })
            .collect()
    }

    fn costs(&self) -> Vec<f64> {
        let cfg = &self.cfg;
        let r2 = cfg.proximity_radius * cfg.proximity_radius;
        self.bodies
            .iter()
            .enumerate()
            .map(|(i, me)| {
                let near = self.bodies.iter().enumerate().any(|(j, o)| {
                    j != i && (o.x - me.x).powi(2) + (o.y - me.y).powi(2) < r2
                });
                let wall = me.y <= cfg.wall_margin || me.y >= cfg.width - cfg.wall_margin;
                let mut c = 0.0;
                if near {
                    c += cfg.proximity_cost;
                }
                if wall {
                    c += cfg.wall_cost;
                }
                c
            })
            .collect()
    }

    fn shared_reward(&self) -> f64 {
        let cfg = &self.cfg;
        let half = cfg.width / 2.0;
        let total: f64 = self
            .bodies
            .iter()
            .map(|b| {
                1.0 - (b.vx - cfg.target_speed).abs() / cfg.target_speed
                    - cfg.lane_weight * (b.y - half).abs() / half
            })
            .sum();
        total / self.bodies.len() as f64
    }
}

impl MultiAgentEnv for CorridorVelocityEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> ResetOutcome {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.reset_next()
    }

    fn reset_next(&mut self) -> ResetOutcome {
        self.spawn();
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
        let cfg = &self.cfg;
        for (b, a) in self.bodies.iter_mut().zip(actions) {
            let Action::Continuous(a) = a else { unreachable!("validated") };
            b.vx += cfg.dt * (cfg.max_accel * a[0] - cfg.drag * b.vx);
            b.vy += cfg.dt * (cfg.max_accel * a[1] - cfg.drag * b.vy);
            b.x += cfg.dt * b.vx;
            b.y += cfg.dt * b.vy;
            if b.y < 0.0 || b.y > cfg.width {
                b.y = b.y.clamp(0.0, cfg.width);
                b.vy = 0.0;
            }
            if b.x < 0.0 || b.x > cfg.length {
                b.x = b.x.clamp(0.0, cfg.length);
                b.vx = 0.0;
            }
        }
        self.t += 1;
        let truncated = self.t >= cfg.horizon;
        self.finished = truncated;
        let reward = self.shared_reward();
        Ok(StepOutcome {
            next_obs: self.observe(),
            rewards: vec![reward; cfg.n_agents],
            costs: self.costs(),
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

    fn env() -> CorridorVelocityEnv {
        CorridorVelocityEnv::new(CorridorConfig::default(), 25.0).unwrap()
    }

    fn idle() -> Vec<Action> {
        vec![Action::Continuous(vec![0.0, 0.0]); 2]
    }

    #[test]
    fn reset_is_deterministic_per_seed() {
        let (mut a, mut b) = (env(), env());
        assert_eq!(a.reset(42), b.reset(42));
        assert_ne!(a.reset(1).observations, b.reset(2).observations);
    }

    #[test]
    fn reset_mid_episode_restarts_counter() {
        let mut e = env();
        e.reset(0);
        for _ in 0..10 {
            e.step(&idle()).unwrap();
        }
        assert_eq!(e.step_count(), 10);
        let fresh = e.reset(0);
        assert_eq!(e.step_count(), 0);
        assert_eq!(fresh.observations, env().reset(0).observations);
    }

    #[test]
    fn separated_idle_agents_cost_nothing() {
        let mut e = env();
        e.reset(0);
        e.set_state(&[(0.0, 0.5, 0.0, 0.0), (0.0, 1.5, 0.0, 0.0)]).unwrap();
        let out = e.step(&idle()).unwrap();
        assert_eq!(out.costs, vec![0.0, 0.0]);
    }

    #[test]
    fn colocated_agents_both_pay() {
        let mut e = env();
        e.reset(0);
        e.set_state(&[(1.0, 1.0, 0.0, 0.0), (1.0, 1.0, 0.0, 0.0)]).unwrap();
        let out = e.step(&idle()).unwrap();
        assert!(out.costs.iter().all(|&c| c > 0.0));
    }

    #[test]
    fn wall_contact_costs() {
        let mut e = env();
        e.reset(0);
        e.set_state(&[(0.0, 0.0, 0.0, 0.0), (5.0, 1.0, 0.0, 0.0)]).unwrap();
        let out = e.step(&idle()).unwrap();
        assert!(out.costs[0] > 0.0);
        assert_eq!(out.costs[1], 0.0);
    }

    #[test]
    fn out_of_bounds_action_rejected() {
        let mut e = env();
        e.reset(0);
        let bad = vec![Action::Continuous(vec![1.5, 0.0]), Action::Continuous(vec![0.0, 0.0])];
        assert!(matches!(e.step(&bad), Err(Error::InvalidAction { agent: 0, .. })));
        let nan = vec![Action::Continuous(vec![0.0, 0.0]), Action::Continuous(vec![f64::NAN, 0.0])];
        assert!(matches!(e.step(&nan), Err(Error::InvalidAction { agent: 1, .. })));
        assert!(e.step(&[Action::Discrete(0), Action::Discrete(0)]).is_err());
    }

    #[test]
    fn truncates_exactly_at_horizon() {
        let mut e = env();
        e.reset(3);
        for t in 1..=200 {
            let out = e.step(&idle()).unwrap();
            assert_eq!(out.truncated, t == 200);
        }
        assert!(matches!(e.step(&idle()), Err(Error::EpisodeFinished)));
    }

    #[test]
    fn random_play_keeps_invariants() {
        let mut e = env();
        e.reset(9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let a: Vec<_> = (0..2)
                .map(|_| Action::Continuous(vec![rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]))
                .collect();
            let out = e.step(&a).unwrap();
            assert!(out.costs.iter().all(|&c| c >= 0.0));
            assert_eq!(out.next_obs.len(), 2);
            for (x, y) in e.positions() {
                assert!((0.0..=100.0).contains(&x) && (0.0..=2.0).contains(&y));
            }
            if out.done() {
                e.reset_next();
            }
        }
    }

    #[test]
    fn idle_policy_is_feasible_and_random_policy_is_not() {
        let episode_cost = |e: &mut CorridorVelocityEnv, rng: &mut Option<ChaCha8Rng>| {
            let mut c = 0.0;
            loop {
                let a: Vec<_> = (0..2)
                    .map(|_| match rng {
                        Some(r) => Action::Continuous(vec![r.random_range(-1.0..=1.0), r.random_range(-1.0..=1.0)]),
                        None => Action::Continuous(vec![0.0, 0.0]),
                    })
                    .collect();
                let out = e.step(&a).unwrap();
                c += out.costs.iter().sum::<f64>() / 2.0;
                if out.done() {
                    return c;
                }
            }
        };
        let mut e = env();
        for seed in 0..5 {
            e.reset(seed);
            assert_eq!(episode_cost(&mut e, &mut None), 0.0);
        }
        let mut rng = Some(ChaCha8Rng::seed_from_u64(0));
        let mut total = 0.0;
        for seed in 0..20 {
            e.reset(seed);
            total += episode_cost(&mut e, &mut rng);
        }
        assert!(total / 20.0 > 25.0, "random-policy mean cost {}", total / 20.0);
    }
}
