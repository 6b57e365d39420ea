use hazboard::config::Variant;
use hazboard::env::EnvConfig;
use hazboard::trainer::{Counters, IterationStats, Observer, Trainer};
use hazboard::{EvalCheckpoint, ExperimentConfig};

fn tiny(variant: Variant) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default().with_variant(variant);
    cfg.run.num_envs = 2;
    cfg.run.rollout_len = 24;
    cfg.run.total_steps = 48;
    cfg.run.eval_interval = 1_000_000;
    cfg.run.eval_episodes = 2;
    cfg.train.hidden_size = 8;
    cfg.train.epochs = 2;
    cfg.blackboard.d_msg = 4;
    cfg.blackboard.embed_dim = 8;
    if let EnvConfig::CorridorVelocity(c) = &mut cfg.env {
        c.horizon = 10;
    }
    cfg
}

#[derive(Default)]
struct Record {
    rows: Vec<IterationStats>,
    checkpoints: Vec<EvalCheckpoint>,
}

impl Observer for Record {
    fn on_iteration(&mut self, stats: &IterationStats) -> hazboard::Result<()> {
        self.rows.push(stats.clone());
        Ok(())
    }

    fn on_checkpoint(&mut self, cp: &EvalCheckpoint) -> hazboard::Result<()> {
        self.checkpoints.push(cp.clone());
        Ok(())
    }
}

#[test]
fn always_write_stores_every_write_bit() {
    let mut t = Trainer::new(tiny(Variant::AlwaysWrite), 0).unwrap();
    let (buf, summary) = t.collect().unwrap();
    assert!(buf.writes.iter().all(|&w| w));
    assert_eq!(summary.write_rate, 1.0);
    let stats = t.train_iteration(&mut ()).unwrap();
    assert_eq!(stats.write_rate, 1.0);
    assert_eq!(stats.write_penalty, 1.0);
}

#[test]
fn no_blackboard_stores_zero_contexts_and_reads_nothing() {
    let mut t = Trainer::new(tiny(Variant::NoBlackboard), 0).unwrap();
    let (buf, summary) = t.collect().unwrap();
    assert!(buf.contexts.iter().all(|&v| v == 0.0));
    assert_eq!(summary.context_occupancy, 0.0);
    t.run(&mut ()).unwrap();
    let c = t.counters();
    assert_eq!((c.board_reads, c.board_writes, c.board_clears), (0, 0, 0));
    assert!(c.wbce_grad_passes > 0);
}

#[test]
fn full_variant_reads_and_clears_boards() {
    let mut t = Trainer::new(tiny(Variant::Full), 0).unwrap();
    t.run(&mut ()).unwrap();
    let c = t.counters();
    assert!(c.board_reads > 0 && c.board_writes > 0 && c.board_clears > 0);
    assert!(c.label_passes > 0 && c.wbce_grad_passes > 0);
}

#[test]
fn no_hazard_loss_accumulates_no_wbce_gradient() {
    let mut t = Trainer::new(tiny(Variant::NoHazardLoss), 0).unwrap();
    t.run(&mut ()).unwrap();
    assert_eq!(t.counters().wbce_grad_passes, 0);
    assert!(t.counters().board_reads > 0);
}

#[test]
fn degenerate_baseline_touches_no_optional_path() {
    let mut t = Trainer::new(tiny(Variant::MappoLag), 0).unwrap();
    assert!(t.model().message.is_none());
    let mut rec = Record::default();
    t.run(&mut rec).unwrap();
    assert_eq!(t.counters(), Counters::default());
    assert!(rec.rows.iter().all(|r| r.write_rate == 0.0 && r.hazard_label_rate == 0.0 && r.wbce == 0.0));
}

#[test]
fn zero_learning_rates_freeze_parameters_but_not_lambda() {
    let mut cfg = tiny(Variant::Full);
    cfg.train.actor_lr = 0.0;
    cfg.train.critic_lr = 0.0;
    cfg.dual.step_size = 0.01;
    let mut t = Trainer::new(cfg, 3).unwrap();
    let before = t.model().clone();
    let stats = t.train_iteration(&mut ()).unwrap();
    assert_eq!(t.model(), &before);
    let expected = (0.1 + 0.01 * (stats.cost_estimate - 25.0)).clamp(0.0, 100.0);
    assert_eq!(t.dual().lambda, expected);
    assert_ne!(t.dual().lambda, 0.1);
}

#[test]
fn identical_seeds_give_identical_parameters() {
    let run = |seed| {
        let mut t = Trainer::new(tiny(Variant::Full), seed).unwrap();
        let mut rec = Record::default();
        t.run(&mut rec).unwrap();
        (t.model().clone(), rec.rows, rec.checkpoints)
    };
    let a = run(7);
    let b = run(7);
    assert!(a == b);
    let c = run(8);
    assert!(a.0 != c.0);
}

#[test]
fn one_rollout_budget_runs_one_iteration() {
    let mut cfg = tiny(Variant::Full);
    cfg.run.total_steps = (cfg.run.rollout_len * cfg.run.num_envs) as u64;
    let mut t = Trainer::new(cfg, 0).unwrap();
    let mut rec = Record::default();
    t.run(&mut rec).unwrap();
    assert_eq!(rec.rows.len(), 1);
    assert_eq!(rec.checkpoints.len(), 1);
    assert_eq!(rec.checkpoints[0].step, 48);
}

#[test]
fn zero_cost_advantage_makes_lambda_irrelevant() {
    let cost_free = |lambda: f64| {
        let mut cfg = tiny(Variant::Full);
        if let EnvConfig::CorridorVelocity(c) = &mut cfg.env {
            c.proximity_cost = 0.0;
            c.wall_cost = 0.0;
        }
        cfg.dual.lambda_init = lambda;
        cfg.dual.step_size = 0.0;
        let mut t = Trainer::new(cfg, 5).unwrap();
        t.model_mut().critic_c.params.iter_mut().for_each(|v| *v = 0.0);
        t.train_iteration(&mut ()).unwrap();
        t.train_iteration(&mut ()).unwrap();
        t.model().clone()
    };
    assert_eq!(cost_free(0.0), cost_free(0.1));
}

#[test]
fn dual_variable_stays_in_bounds_during_training() {
    let mut cfg = tiny(Variant::Full);
    cfg.dual.cost_budget = 0.0;
    cfg.dual.step_size = 50.0;
    let mut t = Trainer::new(cfg, 1).unwrap();
    let mut rec = Record::default();
    t.run(&mut rec).unwrap();
    assert!(rec.rows.iter().all(|r| (0.0..=100.0).contains(&r.lambda)));
}

#[test]
fn evaluation_is_deterministic_and_sized() {
    let mut t = Trainer::new(tiny(Variant::Full), 2).unwrap();
    let a = t.evaluate().unwrap();
    let b = t.evaluate().unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 2);
    assert!(a.iter().all(|&(_, c)| c >= 0.0));
}

#[test]
fn hazard_goals_trains_with_a_categorical_policy() {
    let mut cfg = tiny(Variant::Full);
    cfg.env = EnvConfig::HazardGoals(Default::default());
    let mut t = Trainer::new(cfg, 0).unwrap();
    let report = t.run(&mut ()).unwrap();
    assert!(report.c_final >= 0.0);
}

#[test]
fn threshold_stays_in_bounds_during_training() {
    let mut t = Trainer::new(tiny(Variant::Full), 4).unwrap();
    let mut rec = Record::default();
    t.run(&mut rec).unwrap();
    assert!(rec.rows.iter().all(|r| (0.05..=0.95).contains(&r.tau)));
}
