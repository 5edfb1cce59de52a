//! Estimators built from the efficient influence function and its pieces.

use nalgebra::DMatrix;
use rayon::prelude::*;
use std::str::FromStr;

use super::{contributions, require, GradientEstimate};
use crate::env::{Dataset, Trajectory};
use crate::error::{Error, Result};
use crate::nuisance::{derive_v_dv, Family, Nuisances, QuadratureRule};
use crate::policy::{DifferentiablePolicy, Policy, TrajectoryTerms};

/// The four summands of one step of the MDP influence function:
/// `d̂μ_j (r_j − q̂_j)`, `−μ̂_j d̂q_j`, `μ̂_{j-1} d̂v_j`, `d̂μ_{j-1} v̂_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct EifTermBreakdown {
    pub step: usize,
    pub residual: Vec<f64>,
    pub dq: Vec<f64>,
    pub dv: Vec<f64>,
    pub v: Vec<f64>,
}

impl EifTermBreakdown {
    pub fn total(&self) -> Vec<f64> {
        (0..self.residual.len())
            .map(|k| self.residual[k] + self.dq[k] + self.dv[k] + self.v[k])
            .collect()
    }
}

fn steps(tr: &Trajectory, nuisances: &dyn Nuisances, d: usize, mut visit: impl FnMut(EifTermBreakdown)) {
    let mut mu_prev = 1.0;
    let mut dmu_prev = vec![0.0; d];
    let mut dmu = vec![0.0; d];
    let mut dq = vec![0.0; d];
    let mut dv = vec![0.0; d];
    for j in 0..tr.horizon() {
        let (s, a, r) = (tr.state(j), tr.action(j), tr.reward(j));
        let q = nuisances.q(j, s, a);
        let v = nuisances.v_dv(j, s, &mut dv);
        let mu = nuisances.mu(j, s, a);
        nuisances.dmu(j, s, a, &mut dmu);
        nuisances.dq(j, s, a, &mut dq);
        visit(EifTermBreakdown {
            step: j,
            residual: dmu.iter().map(|x| x * (r - q)).collect(),
            dq: dq.iter().map(|x| -mu * x).collect(),
            dv: dv.iter().map(|x| mu_prev * x).collect(),
            v: dmu_prev.iter().map(|x| x * v).collect(),
        });
        mu_prev = mu;
        std::mem::swap(&mut dmu_prev, &mut dmu);
    }
}

/// Per-step summands of the influence function on one trajectory.
pub fn eif_breakdown(tr: &Trajectory, nuisances: &dyn Nuisances) -> Result<Vec<EifTermBreakdown>> {
    require(nuisances, &Family::ALL)?;
    let mut out = Vec::with_capacity(tr.horizon());
    steps(tr, nuisances, nuisances.dim(), |b| out.push(b));
    Ok(out)
}

/// One trajectory's influence-function contribution, written into `out`.
pub fn eoppg_contribution(tr: &Trajectory, nuisances: &dyn Nuisances, out: &mut [f64]) {
    out.fill(0.0);
    steps(tr, nuisances, out.len(), |b| {
        for (k, o) in out.iter_mut().enumerate() {
            *o += b.residual[k] + b.dq[k] + b.dv[k] + b.v[k];
        }
    });
}

/// EOPPG with one fixed nuisance set (no sample splitting).
pub fn grad_eoppg_with_nuisances(
    data: &Dataset,
    target: &dyn DifferentiablePolicy,
    behavior: &dyn Policy,
    nuisances: &dyn Nuisances,
) -> Result<GradientEstimate> {
    require(nuisances, &Family::ALL)?;
    let m = contributions(data, target, behavior, |tr, _, out| eoppg_contribution(tr, nuisances, out));
    Ok(GradientEstimate::from_contributions("eoppg", m))
}

/// Influence function that ignores the Markov structure: the cumulative
/// ratio `ν_{0:j}` and its derivative `ν_{0:j} Σ_{s≤j} g_s` take the place of
/// `μ_j` and `d^μ_j`. Only `q̂` and `d̂q` are used.
pub fn nmdp_contribution(tr: &Trajectory, tt: &TrajectoryTerms, nuisances: &dyn Nuisances, out: &mut [f64]) {
    let d = out.len();
    let cum = tt.cumulative_scores();
    let mut nu_prev = 1.0;
    let mut dnu_prev = vec![0.0; d];
    let mut dq = vec![0.0; d];
    let mut dv = vec![0.0; d];
    out.fill(0.0);
    for j in 0..tr.horizon() {
        let (s, a, r) = (tr.state(j), tr.action(j), tr.reward(j));
        let nu = tt.ratios.prefix_log(j).exp();
        let q = nuisances.q(j, s, a);
        let v = nuisances.v_dv(j, s, &mut dv);
        nuisances.dq(j, s, a, &mut dq);
        for k in 0..d {
            let dnu = nu * cum[j * d + k];
            out[k] += dnu * (r - q) - nu * dq[k] + nu_prev * dv[k] + dnu_prev[k] * v;
            dnu_prev[k] = dnu;
        }
        nu_prev = nu;
    }
}

pub fn grad_eif_nmdp(
    data: &Dataset,
    target: &dyn DifferentiablePolicy,
    behavior: &dyn Policy,
    nuisances: &dyn Nuisances,
) -> Result<GradientEstimate> {
    require(nuisances, &[Family::Q, Family::Dq])?;
    let m = contributions(data, target, behavior, |tr, tt, out| nmdp_contribution(tr, tt, nuisances, out));
    Ok(GradientEstimate::from_contributions("eif_nmdp", m))
}

/// Estimators that use only part of the nuisance set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpecialVariant {
    /// `E_n[d̂v_0(s_0)]`.
    A,
    /// `E_n[Σ_j d̂μ_j r_j]`.
    B,
    /// `E_n[Σ_j μ̂_{j-1} E_π[q̂_j g_j | s_j]]`.
    C,
}

impl SpecialVariant {
    pub fn name(self) -> &'static str {
        match self {
            SpecialVariant::A => "special_a",
            SpecialVariant::B => "special_b",
            SpecialVariant::C => "special_c",
        }
    }

    pub fn required(self) -> &'static [Family] {
        match self {
            SpecialVariant::A => &[Family::Q, Family::Dq],
            SpecialVariant::B => &[Family::Dmu],
            SpecialVariant::C => &[Family::Q, Family::Mu],
        }
    }

    pub(crate) fn contribution(
        self,
        tr: &Trajectory,
        nuisances: &dyn Nuisances,
        target: &dyn DifferentiablePolicy,
        rule: &QuadratureRule,
        out: &mut [f64],
    ) {
        out.fill(0.0);
        match self {
            SpecialVariant::A => nuisances.dv(0, tr.state(0), out),
            SpecialVariant::B => {
                let mut dmu = vec![0.0; out.len()];
                for j in 0..tr.horizon() {
                    nuisances.dmu(j, tr.state(j), tr.action(j), &mut dmu);
                    for (o, x) in out.iter_mut().zip(&dmu) {
                        *o += x * tr.reward(j);
                    }
                }
            }
            SpecialVariant::C => {
                let mut mu_prev = 1.0;
                for j in 0..tr.horizon() {
                    let s = tr.state(j);
                    // E_π[q g | s] is d^v of the pair (q, 0)
                    let (_, qg) = derive_v_dv(|s, a| nuisances.q(j, s, a), |_, _, o| o.fill(0.0), target, rule, s);
                    for (o, x) in out.iter_mut().zip(&qg) {
                        *o += mu_prev * x;
                    }
                    mu_prev = nuisances.mu(j, s, tr.action(j));
                }
            }
        }
    }
}

impl FromStr for SpecialVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" | "special_a" => Ok(SpecialVariant::A),
            "b" | "special_b" => Ok(SpecialVariant::B),
            "c" | "special_c" => Ok(SpecialVariant::C),
            _ => Err(Error::UnknownEstimator(s.to_string())),
        }
    }
}

pub fn grad_special(
    data: &Dataset,
    variant: SpecialVariant,
    target: &dyn DifferentiablePolicy,
    behavior: &dyn Policy,
    nuisances: &dyn Nuisances,
    rule: &QuadratureRule,
) -> Result<GradientEstimate> {
    require(nuisances, variant.required())?;
    let m = contributions(data, target, behavior, |tr, _, out| {
        variant.contribution(tr, nuisances, target, rule, out)
    });
    Ok(GradientEstimate::from_contributions(variant.name(), m))
}

/// Doubly robust value estimate with its per-trajectory terms.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueEstimate {
    pub value: f64,
    pub contributions: Vec<f64>,
}

/// `E_n[v̂_0(s_0) + Σ_j μ̂_j (r_j + v̂_{j+1}(s_{j+1}) − q̂_j)]`.
pub fn value_dr(data: &Dataset, nuisances: &dyn Nuisances) -> Result<ValueEstimate> {
    require(nuisances, &[Family::Q, Family::Mu])?;
    let contributions: Vec<f64> = data
        .trajectories()
        .par_iter()
        .map(|tr| {
            let mut total = nuisances.v(0, tr.state(0));
            for j in 0..tr.horizon() {
                let (s, a) = (tr.state(j), tr.action(j));
                let next = nuisances.v(j + 1, tr.state(j + 1));
                total += nuisances.mu(j, s, a) * (tr.reward(j) + next - nuisances.q(j, s, a));
            }
            total
        })
        .collect();
    let value = contributions.iter().sum::<f64>() / contributions.len() as f64;
    Ok(ValueEstimate { value, contributions })
}

pub(crate) fn stack(rows: Vec<Vec<f64>>, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), d, |i, k| rows[i][k])
}
