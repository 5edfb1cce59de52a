//! Off-policy projected gradient ascent over a box of parameters.

use serde::{Deserialize, Serialize};
use std::io::Write;
use std::time::Instant;

use crate::env::{Dataset, LqBenchmark};
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimatorConfig, EstimatorKind};
use crate::policy::{DifferentiablePolicy, Policy};
use crate::rng::derive_seed;

/// Per-coordinate bounds `[lower_k, upper_k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    /// The same interval in every coordinate.
    pub fn cube(lower: f64, upper: f64, dim: usize) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() || self.lower.is_empty() {
            return Err(Error::InvalidArgument("box bounds must be nonempty and of equal length".into()));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| l.is_nan() || u.is_nan() || l > u) {
            return Err(Error::InvalidArgument("box lower bound exceeds upper bound".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim() && theta.iter().enumerate().all(|(k, &x)| self.lower[k] <= x && x <= self.upper[k])
    }

    /// Euclidean diameter.
    pub fn diameter(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| (u - l).powi(2)).sum::<f64>().sqrt()
    }

    pub fn project(&self, theta: &mut [f64]) {
        for (k, x) in theta.iter_mut().enumerate() {
            *x = x.clamp(self.lower[k], self.upper[k]);
        }
    }
}

/// Euclidean projection onto the box: a per-coordinate clamp.
pub fn project(theta: &[f64], bounds: &ParamBox) -> Vec<f64> {
    let mut out = theta.to_vec();
    bounds.project(&mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant { alpha: f64 },
    /// `α_t = Υ / √(t c)`.
    InverseSqrt { upsilon: f64, c: f64 },
}

impl StepSchedule {
    /// Step size at iteration `t ≥ 1`.
    pub fn alpha(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Constant { alpha } => alpha,
            StepSchedule::InverseSqrt { upsilon, c } => upsilon / (t as f64 * c).sqrt(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSchedule::Constant { alpha } => alpha > 0.0 && alpha.is_finite(),
            StepSchedule::InverseSqrt { upsilon, c } => upsilon > 0.0 && c > 0.0 && upsilon.is_finite() && c.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("step sizes must be positive: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AscentConfig {
    pub theta1: Vec<f64>,
    pub schedule: StepSchedule,
    pub iterations: usize,
    pub bounds: ParamBox,
    pub estimator: EstimatorKind,
    #[serde(default)]
    pub estimator_config: EstimatorConfig,
}

impl AscentConfig {
    /// Constant step 0.15, 40 iterations from 0.2 in `[0, 2]`, EOPPG.
    pub fn benchmark_default() -> Self {
        Self {
            theta1: vec![0.2],
            schedule: StepSchedule::Constant { alpha: 0.15 },
            iterations: 40,
            bounds: ParamBox::cube(0.0, 2.0, 1).expect("valid box"),
            estimator: EstimatorKind::Eoppg,
            estimator_config: EstimatorConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        self.schedule.validate()?;
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("need at least one iteration".into()));
        }
        if !self.bounds.contains(&self.theta1) {
            return Err(Error::InvalidArgument(format!("initial parameter {:?} is outside the box", self.theta1)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AscentStep {
    pub t: usize,
    pub theta: Vec<f64>,
    pub gradient: Vec<f64>,
    /// Time spent computing the gradient; not part of any reproducible output.
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AscentTrace {
    pub steps: Vec<AscentStep>,
    /// `θ_{T+1}`.
    pub final_theta: Vec<f64>,
    /// `(1/T) Σ_t θ_t`.
    pub average_theta: Vec<f64>,
}

impl AscentTrace {
    /// Rows `replication,t,theta,grad,J_analytic` for a scalar parameter;
    /// the final iterate is row `T+1` with an empty gradient.
    pub fn write_csv<W: Write>(&self, replication: usize, bench: &LqBenchmark, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["replication", "t", "theta", "grad", "J_analytic"])?;
        let fmt = |x: &[f64]| x.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(";");
        for step in &self.steps {
            w.write_record([
                replication.to_string(),
                step.t.to_string(),
                fmt(&step.theta),
                fmt(&step.gradient),
                format!("{:e}", bench.analytic_value(step.theta[0])),
            ])?;
        }
        w.write_record([
            replication.to_string(),
            (self.steps.len() + 1).to_string(),
            fmt(&self.final_theta),
            String::new(),
            format!("{:e}", bench.analytic_value(self.final_theta[0])),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Projected ascent driven by an arbitrary gradient oracle `grad(θ_t, t)`.
pub fn ascend_with<G>(config: &AscentConfig, mut grad: G) -> Result<AscentTrace>
where
    G: FnMut(&[f64], usize) -> Result<Vec<f64>>,
{
    config.validate()?;
    let d = config.theta1.len();
    let mut theta = config.theta1.clone();
    let mut sum = vec![0.0; d];
    let mut steps = Vec::with_capacity(config.iterations);
    for t in 1..=config.iterations {
        let start = Instant::now();
        let z = grad(&theta, t).map_err(|e| Error::AtIteration {
            iteration: t,
            source: Box::new(e),
        })?;
        if z.len() != d {
            return Err(Error::AtIteration {
                iteration: t,
                source: Box::new(Error::InvalidArgument(format!("gradient has {} components, expected {d}", z.len()))),
            });
        }
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        sum.iter_mut().zip(&theta).for_each(|(s, x)| *s += x);
        let alpha = config.schedule.alpha(t);
        let mut next: Vec<f64> = theta.iter().zip(&z).map(|(x, g)| x + alpha * g).collect();
        config.bounds.project(&mut next);
        steps.push(AscentStep {
            t,
            theta: std::mem::replace(&mut theta, next),
            gradient: z,
            wall_ms,
        });
    }
    let average_theta = sum.iter().map(|s| s / config.iterations as f64).collect();
    Ok(AscentTrace {
        steps,
        final_theta: theta,
        average_theta,
    })
}

/// Off-policy ascent: the same dataset is reused at every iteration and the
/// estimator (with its nuisances) is re-fitted at each `θ_t`. `template`
/// fixes the target family; its parameters are replaced by `θ_t`.
pub fn ascend(
    data: &Dataset,
    template: &dyn DifferentiablePolicy,
    behavior: &dyn Policy,
    config: &AscentConfig,
    seed: u64,
) -> Result<AscentTrace> {
    if template.num_params() != config.theta1.len() {
        return Err(Error::InvalidArgument(format!(
            "policy has {} parameters, initial point has {}",
            template.num_params(),
            config.theta1.len()
        )));
    }
    ascend_with(config, |theta, t| {
        let target = template.with_params(theta);
        let est = estimate(
            config.estimator,
            data,
            target.as_ref(),
            behavior,
            &config.estimator_config,
            derive_seed(seed, &[t as u64]),
        )?;
        Ok(est.value.iter().copied().collect())
    })
}

/// `J(θ*) − J(θ̂)` on the benchmark.
pub fn regret(theta: f64, bench: &LqBenchmark) -> f64 {
    bench.regret(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::sample_dataset;
    use proptest::prelude::*;

    fn analytic_config(theta1: f64) -> AscentConfig {
        AscentConfig {
            theta1: vec![theta1],
            ..AscentConfig::benchmark_default()
        }
    }

    #[test]
    fn clamp_examples() {
        let b = ParamBox::cube(0.0, 2.0, 1).unwrap();
        assert_eq!(project(&[5.0], &b), vec![2.0]);
        assert_eq!(project(&[1.3], &b), vec![1.3]);
        assert_eq!(project(&[-1.0], &b), vec![0.0]);
    }

    #[test]
    fn bad_boxes_and_configs_are_rejected() {
        assert!(ParamBox::cube(1.0, 0.0, 1).is_err());
        assert!(ParamBox::new(vec![0.0], vec![1.0, 2.0]).is_err());
        let mut c = analytic_config(3.0);
        assert!(c.validate().is_err());
        c.theta1 = vec![0.5];
        c.iterations = 0;
        assert!(c.validate().is_err());
        c.iterations = 5;
        c.schedule = StepSchedule::Constant { alpha: 0.0 };
        assert!(c.validate().is_err());
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_non_expansive(
            x in prop::collection::vec(-5.0f64..5.0, 3),
            y in prop::collection::vec(-5.0f64..5.0, 3),
        ) {
            let b = ParamBox::new(vec![-1.0, 0.0, 0.5], vec![1.0, 2.0, 0.5]).unwrap();
            let (px, py) = (project(&x, &b), project(&y, &b));
            prop_assert!(b.contains(&px));
            prop_assert_eq!(project(&px, &b), px.clone());
            let dist = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
            prop_assert!(dist(&px, &py) <= dist(&x, &y) + 1e-15);
        }
    }

    #[test]
    fn zero_gradient_keeps_theta_fixed() {
        let trace = ascend_with(&analytic_config(0.7), |_, _| Ok(vec![0.0])).unwrap();
        assert!(trace.steps.iter().all(|s| s.theta == vec![0.7]));
        assert_eq!(trace.final_theta, vec![0.7]);
        assert!((trace.average_theta[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn schedules() {
        let s = StepSchedule::InverseSqrt { upsilon: 2.0, c: 4.0 };
        assert!((s.alpha(1) - 1.0).abs() < 1e-15);
        assert!((s.alpha(4) - 0.5).abs() < 1e-15);
        assert_eq!(StepSchedule::Constant { alpha: 0.3 }.alpha(17), 0.3);
    }

    /// Plain loop with the same update, written independently.
    fn reference_ascent(bench: &LqBenchmark, mut theta: f64, alpha: f64, iterations: usize) -> f64 {
        for _ in 0..iterations {
            theta = (theta + alpha * bench.analytic_gradient(theta)).clamp(0.0, 2.0);
        }
        theta
    }

    #[test]
    fn analytic_ascent_reaches_the_optimum_at_horizon_20() {
        let bench = LqBenchmark::with_horizon(20);
        let trace = ascend_with(&analytic_config(0.2), |th, _| Ok(vec![bench.analytic_gradient(th[0])])).unwrap();
        let last = trace.final_theta[0];
        assert_eq!(last, reference_ascent(&bench, 0.2, 0.15, 40));
        assert!((trace.steps[39].theta[0] - 1.0).abs() < 0.05);
        assert!(bench.regret(last) < 1e-3, "regret {}", bench.regret(last));
        assert!(trace.steps.iter().all(|s| (0.0..=2.0).contains(&s.theta[0])));
    }

    #[test]
    fn constant_step_bounces_between_box_edges_at_horizon_50() {
        // the curvature at the box edges is far beyond 2 / 0.15
        let bench = LqBenchmark::default();
        let trace = ascend_with(&analytic_config(0.2), |th, _| Ok(vec![bench.analytic_gradient(th[0])])).unwrap();
        let edges: Vec<f64> = trace.steps[1..].iter().map(|s| s.theta[0]).collect();
        assert!(edges.iter().all(|&x| x == 0.0 || x == 2.0));
        assert_eq!(trace.final_theta, vec![0.0]);
    }

    #[test]
    fn small_steps_increase_value_monotonically() {
        let bench = LqBenchmark::with_horizon(20);
        let mut c = analytic_config(0.2);
        c.schedule = StepSchedule::Constant { alpha: 0.01 };
        c.iterations = 60;
        let trace = ascend_with(&c, |th, _| Ok(vec![bench.analytic_gradient(th[0])])).unwrap();
        let values: Vec<f64> = trace.steps.iter().map(|s| bench.analytic_value(s.theta[0])).collect();
        assert!(values.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn estimator_errors_carry_the_iteration() {
        let err = ascend_with(&analytic_config(0.5), |_, t| {
            if t == 3 {
                Err(Error::EmptyDataset)
            } else {
                Ok(vec![0.1])
            }
        })
        .unwrap_err();
        assert!(matches!(err, Error::AtIteration { iteration: 3, .. }));
    }

    #[test]
    fn offpolicy_ascent_is_reproducible() {
        let bench = LqBenchmark::with_horizon(5);
        let data = sample_dataset(&bench, &bench.behavior_policy(), 60, 11).unwrap();
        let mut c = analytic_config(0.4);
        c.iterations = 4;
        let run = || ascend(&data, &bench.target_policy(0.0), &bench.behavior_policy(), &c, 5).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.final_theta, b.final_theta);
        assert_eq!(
            a.steps.iter().map(|s| s.gradient.clone()).collect::<Vec<_>>(),
            b.steps.iter().map(|s| s.gradient.clone()).collect::<Vec<_>>()
        );
    }
}
