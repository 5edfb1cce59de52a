//! Nuisance functions of the efficient influence function.
//!
//! For every decision step `j` the estimators need `q_j, μ_j, d^q_j, d^μ_j`
//! (fitted) and `v_j, d^v_j` (integrated from `q_j, d^q_j` over the target
//! policy). Boundary conventions: everything indexed `j ≥ H` is zero;
//! `μ_{-1} = 1` and `d^μ_{-1} = 0` are applied by the estimators.

mod corrupt;
mod fit;
mod oracle;

pub use crate::quadrature::QuadratureRule;
pub use corrupt::{Corrupted, CorruptionSpec};
pub use fit::{
    fit_dmu_mc, fit_dmu_recursive, fit_dq_mc, fit_dq_recursive, fit_mu_forward, fit_mu_mc, fit_nuisances,
    fit_q_backward, DerivativeRoute, FitConfig, MuRoute,
};
pub use oracle::LqTrueNuisances;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::policy::{ActionNodes, DifferentiablePolicy, Policy};
use crate::regression::RidgeModel;

pub(crate) type Buf = SmallVec<[f64; 8]>;

/// The four fitted nuisance families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Q,
    Mu,
    Dq,
    Dmu,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Q, Family::Mu, Family::Dq, Family::Dmu];

    pub fn name(self) -> &'static str {
        match self {
            Family::Q => "q",
            Family::Mu => "mu",
            Family::Dq => "dq",
            Family::Dmu => "dmu",
        }
    }

    pub(crate) fn index(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "q" => Ok(Family::Q),
            "mu" | "μ" => Ok(Family::Mu),
            "dq" | "d^q" => Ok(Family::Dq),
            "dmu" | "d^mu" | "dμ" => Ok(Family::Dmu),
            other => Err(Error::UnknownFamily(other.to_string())),
        }
    }
}

/// Evaluation interface shared by fitted, analytic and corrupted nuisances.
///
/// Vector-valued functions write `dim()` components into `out`. Calls with
/// `j ≥ horizon()` must return zero for `q, v, d^q, d^v`.
pub trait Nuisances: Send + Sync {
    fn horizon(&self) -> usize;

    /// Number of policy parameters `D`.
    fn dim(&self) -> usize;

    fn has(&self, family: Family) -> bool;

    fn q(&self, j: usize, s: &[f64], a: f64) -> f64;

    fn v(&self, j: usize, s: &[f64]) -> f64;

    fn mu(&self, j: usize, s: &[f64], a: f64) -> f64;

    fn dq(&self, j: usize, s: &[f64], a: f64, out: &mut [f64]);

    fn dv(&self, j: usize, s: &[f64], out: &mut [f64]);

    fn dmu(&self, j: usize, s: &[f64], a: f64, out: &mut [f64]);

    /// `v_j(s)` returned and `d^v_j(s)` written to `out` in one pass.
    fn v_dv(&self, j: usize, s: &[f64], out: &mut [f64]) -> f64 {
        self.dv(j, s, out);
        self.v(j, s)
    }
}

impl<T: Nuisances + ?Sized> Nuisances for &T {
    fn horizon(&self) -> usize {
        (**self).horizon()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn has(&self, family: Family) -> bool {
        (**self).has(family)
    }
    fn q(&self, j: usize, s: &[f64], a: f64) -> f64 {
        (**self).q(j, s, a)
    }
    fn v(&self, j: usize, s: &[f64]) -> f64 {
        (**self).v(j, s)
    }
    fn mu(&self, j: usize, s: &[f64], a: f64) -> f64 {
        (**self).mu(j, s, a)
    }
    fn dq(&self, j: usize, s: &[f64], a: f64, out: &mut [f64]) {
        (**self).dq(j, s, a, out)
    }
    fn dv(&self, j: usize, s: &[f64], out: &mut [f64]) {
        (**self).dv(j, s, out)
    }
    fn dmu(&self, j: usize, s: &[f64], a: f64, out: &mut [f64]) {
        (**self).dmu(j, s, a, out)
    }
    fn v_dv(&self, j: usize, s: &[f64], out: &mut [f64]) -> f64 {
        (**self).v_dv(j, s, out)
    }
}

impl<T: Nuisances + ?Sized> Nuisances for Box<T> {
    fn horizon(&self) -> usize {
        (**self).horizon()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn has(&self, family: Family) -> bool {
        (**self).has(family)
    }
    fn q(&self, j: usize, s: &[f64], a: f64) -> f64 {
        (**self).q(j, s, a)
    }
    fn v(&self, j: usize, s: &[f64]) -> f64 {
        (**self).v(j, s)
    }
    fn mu(&self, j: usize, s: &[f64], a: f64) -> f64 {
        (**self).mu(j, s, a)
    }
    fn dq(&self, j: usize, s: &[f64], a: f64, out: &mut [f64]) {
        (**self).dq(j, s, a, out)
    }
    fn dv(&self, j: usize, s: &[f64], out: &mut [f64]) {
        (**self).dv(j, s, out)
    }
    fn dmu(&self, j: usize, s: &[f64], a: f64, out: &mut [f64]) {
        (**self).dmu(j, s, a, out)
    }
    fn v_dv(&self, j: usize, s: &[f64], out: &mut [f64]) -> f64 {
        (**self).v_dv(j, s, out)
    }
}

/// `(v(s), d^v(s)) = (E_π[q | s], E_π[d^q + q g | s])` by summing over the
/// target's action measure.
pub fn derive_v_dv<Q, DQ>(q: Q, dq: DQ, target: &dyn DifferentiablePolicy, rule: &QuadratureRule, s: &[f64]) -> (f64, Vec<f64>)
where
    Q: Fn(&[f64], f64) -> f64,
    DQ: Fn(&[f64], f64, &mut [f64]),
{
    let mut dv = vec![0.0; target.num_params()];
    let v = derive_v_dv_into(q, dq, target, rule, s, &mut dv);
    (v, dv)
}

/// [`derive_v_dv`] writing `d^v(s)` into `dv`.
pub fn derive_v_dv_into<Q, DQ>(
    q: Q,
    dq: DQ,
    target: &dyn DifferentiablePolicy,
    rule: &QuadratureRule,
    s: &[f64],
    dv: &mut [f64],
) -> f64
where
    Q: Fn(&[f64], f64) -> f64,
    DQ: Fn(&[f64], f64, &mut [f64]),
{
    let d = target.num_params();
    let mut nodes = ActionNodes::new();
    target.action_measure(s, rule, &mut nodes);
    let mut v = 0.0;
    dv.fill(0.0);
    let mut g: Buf = SmallVec::from_elem(0.0, d);
    let mut dqa: Buf = SmallVec::from_elem(0.0, d);
    for &(a, w) in &nodes {
        let qa = q(s, a);
        dq(s, a, &mut dqa);
        target.score(s, a, &mut g);
        v += w * qa;
        for k in 0..d {
            dv[k] += w * (dqa[k] + qa * g[k]);
        }
    }
    v
}

/// One fitted function of one step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepModel {
    /// Identically zero.
    Zero,
    /// Polynomial ridge fit on the inputs `(s, a)`.
    Ridge(RidgeModel),
    /// The closed form `ν̃(s, a) g(s, a)`; used for `d^μ_0`.
    RatioScore,
}

pub(crate) fn input(s: &[f64], a: f64) -> Buf {
    let mut x: Buf = SmallVec::from_slice(s);
    x.push(a);
    x
}

/// Fitted nuisances for one training sample.
///
/// Families that were not fitted are `None`; estimators check availability
/// with [`Nuisances::has`] before evaluating.
#[derive(Debug)]
pub struct NuisanceSet {
    horizon: usize,
    target: Box<dyn DifferentiablePolicy>,
    behavior: Option<Box<dyn Policy>>,
    rule: QuadratureRule,
    q: Option<Vec<StepModel>>,
    mu: Option<Vec<StepModel>>,
    dq: Option<Vec<StepModel>>,
    dmu: Option<Vec<StepModel>>,
}

impl NuisanceSet {
    /// An empty set; attach families with the `with_*` builders.
    pub fn new(horizon: usize, target: &dyn DifferentiablePolicy, rule: QuadratureRule) -> Self {
        Self {
            horizon,
            target: target.with_params(target.params()),
            behavior: None,
            rule,
            q: None,
            mu: None,
            dq: None,
            dmu: None,
        }
    }

    /// Needed only when `d^μ_0` uses the closed form `ν̃_0 g_0`.
    pub fn with_behavior(mut self, behavior: &dyn Policy) -> Self {
        self.behavior = Some(behavior.clone_box());
        self
    }

    pub fn with_family(mut self, family: Family, models: Vec<StepModel>) -> Result<Self> {
        if models.len() != self.horizon {
            return Err(Error::InvalidArgument(format!(
                "{family} has {} step models, horizon is {}",
                models.len(),
                self.horizon
            )));
        }
        if models.contains(&StepModel::RatioScore) && self.behavior.is_none() {
            return Err(Error::InvalidArgument("closed-form d^mu needs the behavior policy".into()));
        }
        let slot = match family {
            Family::Q => &mut self.q,
            Family::Mu => &mut self.mu,
            Family::Dq => &mut self.dq,
            Family::Dmu => &mut self.dmu,
        };
        *slot = Some(models);
        Ok(self)
    }

    pub fn family(&self, family: Family) -> Option<&[StepModel]> {
        match family {
            Family::Q => self.q.as_deref(),
            Family::Mu => self.mu.as_deref(),
            Family::Dq => self.dq.as_deref(),
            Family::Dmu => self.dmu.as_deref(),
        }
    }

    pub fn target(&self) -> &dyn DifferentiablePolicy {
        self.target.as_ref()
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    fn models(&self, family: Family) -> &[StepModel] {
        self.family(family)
            .unwrap_or_else(|| panic!("nuisance `{family}` was not fitted"))
    }

    fn eval_scalar(&self, family: Family, j: usize, s: &[f64], a: f64) -> f64 {
        if j >= self.horizon {
            return 0.0;
        }
        match &self.models(family)[j] {
            StepModel::Zero => 0.0,
            StepModel::Ridge(m) => m.predict_scalar(&input(s, a)),
            StepModel::RatioScore => unreachable!("scalar families have no closed form"),
        }
    }

    fn eval_vector(&self, family: Family, j: usize, s: &[f64], a: f64, out: &mut [f64]) {
        if j >= self.horizon {
            out.fill(0.0);
            return;
        }
        match &self.models(family)[j] {
            StepModel::Zero => out.fill(0.0),
            StepModel::Ridge(m) => m.predict(&input(s, a), out),
            StepModel::RatioScore => {
                let behavior = self.behavior.as_deref().expect("checked in with_family");
                let ratio = (self.target.log_density(s, a) - behavior.log_density(s, a)).exp();
                self.target.score(s, a, out);
                out.iter_mut().for_each(|o| *o *= ratio);
            }
        }
    }

    /// Flat records `(family, j, fold, feature, component, value)` of every
    /// ridge coefficient. Zero and closed-form steps contribute no records.
    pub fn coefficient_records(&self, fold: usize) -> Vec<CoefficientRecord> {
        let mut out = Vec::new();
        for family in Family::ALL {
            let Some(models) = self.family(family) else { continue };
            for (j, model) in models.iter().enumerate() {
                if let StepModel::Ridge(m) = model {
                    let c = m.coefficients();
                    for component in 0..c.ncols() {
                        for feature in 0..c.nrows() {
                            out.push(CoefficientRecord {
                                family: family.name(),
                                j,
                                fold,
                                feature,
                                component,
                                value: c[(feature, component)],
                            });
                        }
                    }
                }
            }
        }
        out
    }

    /// JSON array of [`CoefficientRecord`]s.
    pub fn write_json<W: Write>(&self, fold: usize, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.coefficient_records(fold)).map_err(|e| Error::Io(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientRecord {
    pub family: &'static str,
    pub j: usize,
    pub fold: usize,
    pub feature: usize,
    pub component: usize,
    pub value: f64,
}

impl Nuisances for NuisanceSet {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn dim(&self) -> usize {
        self.target.num_params()
    }

    fn has(&self, family: Family) -> bool {
        self.family(family).is_some()
    }

    fn q(&self, j: usize, s: &[f64], a: f64) -> f64 {
        self.eval_scalar(Family::Q, j, s, a)
    }

    fn v(&self, j: usize, s: &[f64]) -> f64 {
        if j >= self.horizon {
            return 0.0;
        }
        let mut nodes = ActionNodes::new();
        self.target.action_measure(s, &self.rule, &mut nodes);
        nodes.iter().map(|&(a, w)| w * self.q(j, s, a)).sum()
    }

    fn mu(&self, j: usize, s: &[f64], a: f64) -> f64 {
        self.eval_scalar(Family::Mu, j, s, a)
    }

    fn dq(&self, j: usize, s: &[f64], a: f64, out: &mut [f64]) {
        self.eval_vector(Family::Dq, j, s, a, out)
    }

    fn dv(&self, j: usize, s: &[f64], out: &mut [f64]) {
        self.v_dv(j, s, out);
    }

    fn v_dv(&self, j: usize, s: &[f64], out: &mut [f64]) -> f64 {
        if j >= self.horizon {
            out.fill(0.0);
            return 0.0;
        }
        derive_v_dv_into(
            |s, a| self.q(j, s, a),
            |s, a, o| self.dq(j, s, a, o),
            self.target.as_ref(),
            &self.rule,
            s,
            out,
        )
    }

    fn dmu(&self, j: usize, s: &[f64], a: f64, out: &mut [f64]) {
        self.eval_vector(Family::Dmu, j, s, a, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::GaussianLinearPolicy;

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
        assert!(matches!("v".parse::<Family>(), Err(Error::UnknownFamily(_))));
    }

    #[test]
    fn constant_q_gives_constant_v_and_zero_dv() {
        let pi = GaussianLinearPolicy::scalar(0.7, 0.2);
        let rule = QuadratureRule::default();
        let (v, dv) = derive_v_dv(|_, _| 2.5, |_, _, o| o.fill(0.0), &pi, &rule, &[0.4]);
        assert!((v - 2.5).abs() < 1e-14);
        assert!(dv[0].abs() < 1e-12);
    }

    #[test]
    fn linear_q_integrates_to_policy_mean() {
        let pi = GaussianLinearPolicy::scalar(0.7, 0.2);
        let rule = QuadratureRule::default();
        let (v, _) = derive_v_dv(|_, a| a, |_, _, o| o.fill(0.0), &pi, &rule, &[1.3]);
        assert!((v - 0.7 * 1.3).abs() < 1e-14);
    }

    #[test]
    fn quadratic_q_matches_gaussian_moments() {
        // v = (θs)² + σ², d^v = E[a² s (a − θs)] / σ² = 2θs²
        let (theta, sigma) = (0.7, 0.2);
        let pi = GaussianLinearPolicy::scalar(theta, sigma);
        for m in [3, 20] {
            let rule = QuadratureRule::gauss_hermite(m);
            for s in [-1.0, 0.0, 0.5, 2.0] {
                let (v, dv) = derive_v_dv(|_, a| a * a, |_, _, o| o.fill(0.0), &pi, &rule, &[s]);
                assert!((v - ((theta * s).powi(2) + sigma * sigma)).abs() < 1e-13);
                assert!((dv[0] - 2.0 * theta * s * s).abs() < 1e-12, "m={m} s={s}: {}", dv[0]);
            }
        }
    }

    #[test]
    fn terminal_steps_are_zero() {
        let pi = GaussianLinearPolicy::scalar(0.7, 0.2);
        let set = NuisanceSet::new(2, &pi, QuadratureRule::default())
            .with_family(Family::Q, vec![StepModel::Zero, StepModel::Zero])
            .unwrap()
            .with_family(Family::Dq, vec![StepModel::Zero, StepModel::Zero])
            .unwrap();
        let mut out = [1.0];
        assert_eq!(set.q(2, &[1.0], 0.0), 0.0);
        assert_eq!(set.v(5, &[1.0]), 0.0);
        set.dv(2, &[1.0], &mut out);
        assert_eq!(out, [0.0]);
        assert!(set.with_family(Family::Mu, vec![StepModel::Zero]).is_err());
    }
}
