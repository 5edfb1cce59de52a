use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::Environment;
use crate::policy::GaussianLinearPolicy;

/// Scalar linear-quadratic benchmark.
///
/// `s_0 = 0`, `s_{t+1} = a_t − s_t`, `r_t = −s_t²`; the behavior policy is
/// `N(b s, σ²)` and the target class `N(θ s, σ²)`. The transition is
/// deterministic, all noise comes from the policy.
///
/// Under `N(θ s, σ²)` the state follows `s_{t+1} = (θ − 1) s_t + ε`, so the
/// second moments obey `V_0 = 0`, `V_{t+1} = (θ − 1)² V_t + σ²` and
/// `J(θ) = −Σ_{t<H} V_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqBenchmark {
    pub horizon: usize,
    pub sigma: f64,
    pub behavior_coef: f64,
}

impl Default for LqBenchmark {
    fn default() -> Self {
        Self {
            horizon: 50,
            sigma: 0.2,
            behavior_coef: 0.8,
        }
    }
}

impl LqBenchmark {
    pub const OPTIMAL_THETA: f64 = 1.0;

    pub fn with_horizon(horizon: usize) -> Self {
        Self {
            horizon,
            ..Self::default()
        }
    }

    pub fn behavior_policy(&self) -> GaussianLinearPolicy {
        GaussianLinearPolicy::scalar(self.behavior_coef, self.sigma)
    }

    pub fn target_policy(&self, theta: f64) -> GaussianLinearPolicy {
        GaussianLinearPolicy::scalar(theta, self.sigma)
    }

    /// `E[s_t²]` for `t = 0..=H` under `N(θ s, σ²)`.
    pub fn second_moments(&self, theta: f64) -> Vec<f64> {
        let c = (theta - 1.0).powi(2);
        let mut v = Vec::with_capacity(self.horizon + 1);
        v.push(0.0);
        for t in 0..self.horizon {
            v.push(c * v[t] + self.sigma * self.sigma);
        }
        v
    }

    /// `d/dθ E[s_t²]` for `t = 0..=H`.
    pub fn second_moment_grads(&self, theta: f64) -> Vec<f64> {
        let v = self.second_moments(theta);
        let c = (theta - 1.0).powi(2);
        let dc = 2.0 * (theta - 1.0);
        let mut dv = Vec::with_capacity(self.horizon + 1);
        dv.push(0.0);
        for t in 0..self.horizon {
            dv.push(c * dv[t] + dc * v[t]);
        }
        dv
    }

    /// `J(θ) = E Σ_{t<H} r_t`.
    pub fn analytic_value(&self, theta: f64) -> f64 {
        -self.second_moments(theta)[..self.horizon].iter().sum::<f64>()
    }

    /// `dJ/dθ`.
    pub fn analytic_gradient(&self, theta: f64) -> f64 {
        -self.second_moment_grads(theta)[..self.horizon].iter().sum::<f64>()
    }

    /// `J(θ*) − J(θ)` with `θ* = 1`.
    pub fn regret(&self, theta: f64) -> f64 {
        self.analytic_value(Self::OPTIMAL_THETA) - self.analytic_value(theta)
    }
}

impl Environment for LqBenchmark {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn initial_state(&self, _rng: &mut dyn RngCore, out: &mut [f64]) {
        out[0] = 0.0;
    }

    fn reward(&self, _t: usize, state: &[f64], _action: f64, _rng: &mut dyn RngCore) -> f64 {
        -state[0] * state[0]
    }

    fn transition(&self, _t: usize, state: &[f64], action: f64, _rng: &mut dyn RngCore, out: &mut [f64]) {
        out[0] = action - state[0];
    }
}
