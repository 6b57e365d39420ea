use serde::{Deserialize, Serialize};

/// Lagrange multiplier on the episodic cost constraint, updated by projected
/// ascent on the observed violation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambda: f64,
    pub step_size: f64,
    pub budget: f64,
    pub lambda_max: f64,
}

impl DualState {
    pub fn new(lambda: f64, step_size: f64, budget: f64, lambda_max: f64) -> Self {
        Self {
            lambda: lambda.clamp(0.0, lambda_max),
            step_size,
            budget,
            lambda_max,
        }
    }

    /// `lambda <- clip(lambda + step * (cost - budget), 0, lambda_max)`.
    pub fn update(&mut self, cost_estimate: f64) {
        self.lambda = (self.lambda + self.step_size * (cost_estimate - self.budget)).clamp(0.0, self.lambda_max);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_examples() {
        let mut d = DualState::new(0.1, 5e-4, 25.0, 100.0);
        d.update(30.0);
        assert!((d.lambda - 0.1025).abs() < 1e-15);
        let before = d.lambda;
        d.update(25.0);
        assert_eq!(d.lambda, before);
        let mut d = DualState::new(0.001, 5e-4, 25.0, 100.0);
        d.update(20.0);
        assert_eq!(d.lambda, 0.0);
    }

    #[test]
    fn saturates_at_lambda_max() {
        let mut d = DualState::new(99.99, 1.0, 25.0, 100.0);
        d.update(1e6);
        assert_eq!(d.lambda, 100.0);
    }

    proptest! {
        #[test]
        fn stays_in_bounds(costs in prop::collection::vec(0.0f64..500.0, 1..100), step in 0.0f64..1.0) {
            let mut d = DualState::new(0.1, step, 25.0, 100.0);
            for c in costs {
                d.update(c);
                prop_assert!(d.lambda >= 0.0 && d.lambda <= d.lambda_max);
            }
        }

        #[test]
        fn constant_violation_pushes_up(cost in 25.001f64..200.0, n in 1usize..50) {
            let mut d = DualState::new(0.0, 5e-4, 25.0, 100.0);
            for _ in 0..n {
                let before = d.lambda;
                d.update(cost);
                prop_assert!(d.lambda > before || d.lambda == d.lambda_max);
            }
        }
    }
}
