//! Policy-gradient estimators.
//!
//! Every estimator returns a [`GradientEstimate`] holding the per-trajectory
//! contributions along with their mean, so variances and covariances of
//! different estimators can be compared on the same data.

mod crossfit;
mod eif;
mod importance;

pub use crossfit::{
    evaluate_folds, fit_folds, grad_eif_nmdp_crossfit, grad_eoppg, grad_eoppg_with_partition, grad_special_crossfit,
};
pub use eif::{
    eif_breakdown, eoppg_contribution, grad_eif_nmdp, grad_eoppg_with_nuisances, grad_special, nmdp_contribution,
    value_dr, EifTermBreakdown, SpecialVariant, ValueEstimate,
};
pub use importance::{grad_gpomdp, grad_pg_q, grad_reinforce, grad_stepwise_is};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::env::{Dataset, Trajectory};
use crate::error::{Error, Result};
use crate::nuisance::{fit_q_backward, FitConfig, NuisanceSet};
use crate::nuisance::Family;
use crate::policy::{DifferentiablePolicy, Policy, TrajectoryTerms};

/// `Ẑ(θ)` with the contributions it averages.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub estimator: String,
    pub value: DVector<f64>,
    /// `n × D`, one row per trajectory.
    pub contributions: DMatrix<f64>,
}

impl GradientEstimate {
    /// Value is the column mean of `contributions`.
    pub fn from_contributions(estimator: impl Into<String>, contributions: DMatrix<f64>) -> Self {
        let n = contributions.nrows() as f64;
        let value = DVector::from_iterator(
            contributions.ncols(),
            contributions.column_iter().map(|c| c.iter().sum::<f64>() / n),
        );
        Self {
            estimator: estimator.into(),
            value,
            contributions,
        }
    }

    pub fn n(&self) -> usize {
        self.contributions.nrows()
    }

    pub fn dim(&self) -> usize {
        self.contributions.ncols()
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        empirical_covariance(self)
    }
}

/// Sample covariance of the contributions divided by `n`: the estimated
/// covariance of the estimate itself.
pub fn empirical_covariance(est: &GradientEstimate) -> Result<DMatrix<f64>> {
    let n = est.n();
    if n < 2 {
        return Err(Error::TooFewSamples { n, folds: 2 });
    }
    let d = est.dim();
    let mean: Vec<f64> = est.contributions.column_iter().map(|c| c.mean()).collect();
    let mut cov = DMatrix::zeros(d, d);
    for row in est.contributions.row_iter() {
        for a in 0..d {
            let da = row[a] - mean[a];
            for b in 0..=a {
                cov[(a, b)] += da * (row[b] - mean[b]);
            }
        }
    }
    let denom = (n - 1) as f64 * n as f64;
    for a in 0..d {
        for b in 0..=a {
            cov[(a, b)] /= denom;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    Ok(cov)
}

/// Evaluate `f` on every trajectory in parallel; rows keep data order.
pub(crate) fn contributions<F>(
    data: &Dataset,
    target: &dyn DifferentiablePolicy,
    behavior: &dyn Policy,
    f: F,
) -> DMatrix<f64>
where
    F: Fn(&Trajectory, &TrajectoryTerms, &mut [f64]) + Sync,
{
    let d = target.num_params();
    let rows: Vec<Vec<f64>> = data
        .trajectories()
        .par_iter()
        .map(|tr| {
            let terms = TrajectoryTerms::new(target, behavior, tr);
            let mut out = vec![0.0; d];
            f(tr, &terms, &mut out);
            out
        })
        .collect();
    DMatrix::from_fn(rows.len(), d, |i, k| rows[i][k])
}

pub(crate) fn require(nuisances: &dyn crate::nuisance::Nuisances, families: &[Family]) -> Result<()> {
    for &f in families {
        if !nuisances.has(f) {
            return Err(Error::MissingNuisance(f.name()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Reinforce,
    Gpomdp,
    StepwiseIs,
    /// Plug-in `q`-function policy gradient with `q̂` fitted on the full sample.
    Pg,
    Eoppg,
    EifNmdp,
    SpecialA,
    SpecialB,
    SpecialC,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 9] = [
        EstimatorKind::Reinforce,
        EstimatorKind::Gpomdp,
        EstimatorKind::StepwiseIs,
        EstimatorKind::Pg,
        EstimatorKind::Eoppg,
        EstimatorKind::EifNmdp,
        EstimatorKind::SpecialA,
        EstimatorKind::SpecialB,
        EstimatorKind::SpecialC,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Reinforce => "reinforce",
            EstimatorKind::Gpomdp => "gpomdp",
            EstimatorKind::StepwiseIs => "stepwise_is",
            EstimatorKind::Pg => "pg",
            EstimatorKind::Eoppg => "eoppg",
            EstimatorKind::EifNmdp => "eif_nmdp",
            EstimatorKind::SpecialA => "special_a",
            EstimatorKind::SpecialB => "special_b",
            EstimatorKind::SpecialC => "special_c",
        }
    }

    pub fn needs_nuisances(self) -> bool {
        !matches!(self, EstimatorKind::Reinforce | EstimatorKind::Gpomdp | EstimatorKind::StepwiseIs)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .or(match key.as_str() {
                "stepwise" | "step_wise_is" => Some(EstimatorKind::StepwiseIs),
                "pg_q" => Some(EstimatorKind::Pg),
                "nmdp" => Some(EstimatorKind::EifNmdp),
                _ => None,
            })
            .ok_or_else(|| Error::UnknownEstimator(s.to_string()))
    }
}

/// Settings shared by the nuisance-based estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub folds: usize,
    pub fit: FitConfig,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            folds: 2,
            fit: FitConfig::default(),
        }
    }
}

/// Dispatch by kind. `seed` drives the fold partition of cross-fitted
/// estimators and is ignored by the others.
pub fn estimate(
    kind: EstimatorKind,
    data: &Dataset,
    target: &dyn DifferentiablePolicy,
    behavior: &dyn Policy,
    config: &EstimatorConfig,
    seed: u64,
) -> Result<GradientEstimate> {
    match kind {
        EstimatorKind::Reinforce => Ok(grad_reinforce(data, target, behavior)),
        EstimatorKind::Gpomdp => Ok(grad_gpomdp(data, target, behavior)),
        EstimatorKind::StepwiseIs => Ok(grad_stepwise_is(data, target, behavior)),
        EstimatorKind::Pg => {
            let fmap = config.fit.feature_map(data.state_dim());
            let rule = config.fit.rule();
            let q = fit_q_backward(data, target, &fmap, config.fit.lambda(), &rule)?;
            let set = NuisanceSet::new(data.horizon(), target, rule).with_family(Family::Q, q)?;
            grad_pg_q(data, target, behavior, &set)
        }
        EstimatorKind::Eoppg => grad_eoppg(data, target, behavior, config, seed),
        EstimatorKind::EifNmdp => grad_eif_nmdp_crossfit(data, target, behavior, config, seed),
        EstimatorKind::SpecialA => grad_special_crossfit(data, SpecialVariant::A, target, behavior, config, seed),
        EstimatorKind::SpecialB => grad_special_crossfit(data, SpecialVariant::B, target, behavior, config, seed),
        EstimatorKind::SpecialC => grad_special_crossfit(data, SpecialVariant::C, target, behavior, config, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_of_identical_rows_is_zero() {
        let est = GradientEstimate::from_contributions("x", DMatrix::from_fn(5, 2, |_, k| k as f64 + 1.0));
        assert_eq!(empirical_covariance(&est).unwrap(), DMatrix::zeros(2, 2));
        assert_eq!(est.value.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn covariance_of_symmetric_pair() {
        // rows ±v: unbiased sample covariance 2 v vᵀ, divided by n = 2
        let v = [1.5, -2.0];
        let est = GradientEstimate::from_contributions(
            "x",
            DMatrix::from_row_slice(2, 2, &[v[0], v[1], -v[0], -v[1]]),
        );
        let cov = empirical_covariance(&est).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert!((cov[(a, b)] - v[a] * v[b]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn covariance_needs_two_rows() {
        let est = GradientEstimate::from_contributions("x", DMatrix::from_element(1, 1, 3.0));
        assert!(empirical_covariance(&est).is_err());
    }

    #[test]
    fn covariance_is_psd() {
        use crate::rng::substream;
        use rand::Rng;
        let mut rng = substream(4, 0);
        for _ in 0..20 {
            let m = DMatrix::from_fn(7, 3, |_, _| rng.random::<f64>() - 0.5);
            let cov = empirical_covariance(&GradientEstimate::from_contributions("x", m)).unwrap();
            let eig = cov.symmetric_eigenvalues();
            assert!(eig.iter().all(|&e| e >= -1e-10));
        }
    }

    #[test]
    fn estimator_names_parse() {
        for k in EstimatorKind::ALL {
            assert_eq!(k.name().parse::<EstimatorKind>().unwrap(), k);
        }
        assert_eq!("Stepwise-IS".parse::<EstimatorKind>().unwrap(), EstimatorKind::StepwiseIs);
        assert!("magic".parse::<EstimatorKind>().is_err());
    }
}
