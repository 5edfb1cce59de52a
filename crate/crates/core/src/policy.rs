//! Parametric policies, scores and importance ratios.
//!
//! Actions are scalar. A continuous policy exposes its action distribution to
//! the nuisance code through [`DifferentiablePolicy::action_measure`], which
//! returns a finite set of weighted actions: Gauss–Hermite nodes for a
//! Gaussian, the support itself for a discrete policy.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use smallvec::SmallVec;
use std::f64::consts::PI;

use crate::env::Trajectory;
use crate::quadrature::QuadratureRule;

/// Weighted actions `(a, w)` representing an action distribution.
pub type ActionNodes = SmallVec<[(f64, f64); 24]>;

pub trait Policy: Send + Sync + std::fmt::Debug {
    fn sample(&self, state: &[f64], rng: &mut dyn RngCore) -> f64;

    fn log_density(&self, state: &[f64], action: f64) -> f64;

    fn clone_box(&self) -> Box<dyn Policy>;
}

/// A policy indexed by a parameter vector θ.
pub trait DifferentiablePolicy: Policy {
    fn params(&self) -> &[f64];

    fn num_params(&self) -> usize {
        self.params().len()
    }

    /// `∇_θ log π(a | s)` written into `out` (length `num_params`).
    fn score(&self, state: &[f64], action: f64, out: &mut [f64]);

    /// Weighted actions `(a, w)` such that `Σ w f(a) ≈ E_{a~π(·|s)} f(a)`.
    fn action_measure(&self, state: &[f64], rule: &QuadratureRule, out: &mut ActionNodes);

    /// The same family at a different parameter.
    fn with_params(&self, params: &[f64]) -> Box<dyn DifferentiablePolicy>;
}

/// `N(θᵀs, σ²)` with fixed scale σ; the score is taken in θ only.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLinearPolicy {
    theta: Vec<f64>,
    sigma: f64,
}

impl GaussianLinearPolicy {
    pub fn new(theta: Vec<f64>, sigma: f64) -> Self {
        assert!(sigma > 0.0 && sigma.is_finite(), "policy scale must be positive");
        Self { theta, sigma }
    }

    /// Scalar-state convenience constructor.
    pub fn scalar(theta: f64, sigma: f64) -> Self {
        Self::new(vec![theta], sigma)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mean(&self, state: &[f64]) -> f64 {
        debug_assert_eq!(state.len(), self.theta.len());
        self.theta.iter().zip(state).map(|(t, s)| t * s).sum()
    }
}

impl Policy for GaussianLinearPolicy {
    fn sample(&self, state: &[f64], rng: &mut dyn RngCore) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mean(state) + self.sigma * z
    }

    fn log_density(&self, state: &[f64], action: f64) -> f64 {
        let z = (action - self.mean(state)) / self.sigma;
        -0.5 * z * z - self.sigma.ln() - 0.5 * (2.0 * PI).ln()
    }

    fn clone_box(&self) -> Box<dyn Policy> {
        Box::new(self.clone())
    }
}

impl DifferentiablePolicy for GaussianLinearPolicy {
    fn params(&self) -> &[f64] {
        &self.theta
    }

    fn score(&self, state: &[f64], action: f64, out: &mut [f64]) {
        let scale = (action - self.mean(state)) / (self.sigma * self.sigma);
        for (o, s) in out.iter_mut().zip(state) {
            *o = s * scale;
        }
    }

    fn action_measure(&self, state: &[f64], rule: &QuadratureRule, out: &mut ActionNodes) {
        out.clear();
        out.extend(rule.scaled(self.mean(state), self.sigma));
    }

    fn with_params(&self, params: &[f64]) -> Box<dyn DifferentiablePolicy> {
        Box::new(Self::new(params.to_vec(), self.sigma))
    }
}

/// Two actions `{0, 1}` with `P(a = 1 | s) = sigmoid(θᵀ(1, s))`.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliLogitPolicy {
    theta: Vec<f64>,
}

impl BernoulliLogitPolicy {
    /// `theta[0]` is the intercept, the rest multiply the state.
    pub fn new(theta: Vec<f64>) -> Self {
        assert!(!theta.is_empty());
        Self { theta }
    }

    pub fn prob_one(&self, state: &[f64]) -> f64 {
        debug_assert_eq!(state.len() + 1, self.theta.len());
        let logit = self.theta[0]
            + self.theta[1..]
                .iter()
                .zip(state)
                .map(|(t, s)| t * s)
                .sum::<f64>();
        1.0 / (1.0 + (-logit).exp())
    }
}

impl Policy for BernoulliLogitPolicy {
    fn sample(&self, state: &[f64], rng: &mut dyn RngCore) -> f64 {
        let u: f64 = rng.random();
        if u < self.prob_one(state) {
            1.0
        } else {
            0.0
        }
    }

    fn log_density(&self, state: &[f64], action: f64) -> f64 {
        let p = self.prob_one(state);
        if action > 0.5 {
            p.ln()
        } else {
            (1.0 - p).ln()
        }
    }

    fn clone_box(&self) -> Box<dyn Policy> {
        Box::new(self.clone())
    }
}

impl DifferentiablePolicy for BernoulliLogitPolicy {
    fn params(&self) -> &[f64] {
        &self.theta
    }

    fn score(&self, state: &[f64], action: f64, out: &mut [f64]) {
        let resid = if action > 0.5 { 1.0 } else { 0.0 } - self.prob_one(state);
        out[0] = resid;
        for (o, s) in out[1..].iter_mut().zip(state) {
            *o = s * resid;
        }
    }

    fn action_measure(&self, state: &[f64], _rule: &QuadratureRule, out: &mut ActionNodes) {
        let p = self.prob_one(state);
        out.clear();
        out.push((0.0, 1.0 - p));
        out.push((1.0, p));
    }

    fn with_params(&self, params: &[f64]) -> Box<dyn DifferentiablePolicy> {
        Box::new(Self::new(params.to_vec()))
    }
}

/// `log π^θ(a|s) − log π^b(a|s)`.
pub fn step_ratio_log(target: &dyn Policy, behavior: &dyn Policy, state: &[f64], action: f64) -> f64 {
    target.log_density(state, action) - behavior.log_density(state, action)
}

/// Per-step log density ratios of one trajectory and their prefix sums.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioSeries {
    step: Vec<f64>,
    prefix: Vec<f64>,
}

impl RatioSeries {
    pub fn new(target: &dyn Policy, behavior: &dyn Policy, traj: &Trajectory) -> Self {
        let step: Vec<f64> = (0..traj.horizon())
            .map(|t| step_ratio_log(target, behavior, traj.state(t), traj.action(t)))
            .collect();
        Self::from_steps(step)
    }

    pub fn from_steps(step: Vec<f64>) -> Self {
        let mut acc = 0.0;
        let prefix = step
            .iter()
            .map(|s| {
                acc += s;
                acc
            })
            .collect();
        Self { step, prefix }
    }

    pub fn len(&self) -> usize {
        self.step.len()
    }

    pub fn is_empty(&self) -> bool {
        self.step.is_empty()
    }

    /// `log ν̃_t`.
    pub fn step_log(&self, t: usize) -> f64 {
        self.step[t]
    }

    /// `ν̃_t`.
    pub fn step_ratio(&self, t: usize) -> f64 {
        self.step[t].exp()
    }

    /// `log ν_{0:t}`.
    pub fn prefix_log(&self, t: usize) -> f64 {
        self.prefix[t]
    }

    /// `log ν_{from:to}`; zero for an empty range (`from > to`).
    pub fn cum_log(&self, from: usize, to: usize) -> f64 {
        if from > to {
            0.0
        } else if from == 0 {
            self.prefix[to]
        } else {
            self.prefix[to] - self.prefix[from - 1]
        }
    }

    /// `ν_{from:to}`.
    pub fn cum_ratio(&self, from: usize, to: usize) -> f64 {
        self.cum_log(from, to).exp()
    }

    /// `ν_{0:t}` with the convention `ν_{0:-1} = 1` for `t = None`.
    pub fn prefix_ratio(&self, t: Option<usize>) -> f64 {
        t.map_or(1.0, |t| self.prefix[t].exp())
    }
}

/// Everything an estimator needs about one trajectory under a fixed
/// (target, behavior) pair: log ratios and the scores `g_t`.
#[derive(Debug, Clone)]
pub struct TrajectoryTerms {
    pub ratios: RatioSeries,
    scores: Vec<f64>,
    dim: usize,
}

impl TrajectoryTerms {
    pub fn new(target: &dyn DifferentiablePolicy, behavior: &dyn Policy, traj: &Trajectory) -> Self {
        let dim = target.num_params();
        let mut scores = vec![0.0; traj.horizon() * dim];
        for t in 0..traj.horizon() {
            target.score(traj.state(t), traj.action(t), &mut scores[t * dim..(t + 1) * dim]);
        }
        Self {
            ratios: RatioSeries::new(target, behavior, traj),
            scores,
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `g_t`.
    pub fn score(&self, t: usize) -> &[f64] {
        &self.scores[t * self.dim..(t + 1) * self.dim]
    }

    /// Running sums `G_t = Σ_{ℓ≤t} g_ℓ`, flattened `H × D`.
    pub fn cumulative_scores(&self) -> Vec<f64> {
        let mut out = self.scores.clone();
        for i in self.dim..out.len() {
            out[i] += out[i - self.dim];
        }
        out
    }
}
