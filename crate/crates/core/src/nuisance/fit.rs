//! Regression-based nuisance fitting.
//!
//! Every fit regresses a per-trajectory response on `(s_j, a_j)` with the
//! polynomial sieve of [`FitConfig`]. Monte-Carlo routes build responses from
//! importance ratios and are independent across steps; the recursive routes
//! chain through previously fitted steps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use super::{input, Buf, Family, NuisanceSet, StepModel};
use crate::env::Dataset;
use crate::error::Result;
use crate::policy::{ActionNodes, DifferentiablePolicy, Policy, TrajectoryTerms};
use crate::quadrature::QuadratureRule;
use crate::regression::{FeatureMap, NormalEquations};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuRoute {
    /// Regress `ν_{0:j}` on `(s_j, a_j)`.
    MonteCarlo,
    /// Regress `μ̂_{j-1}(s_{j-1}, a_{j-1}) ν̃_j` on `(s_j, a_j)`.
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeRoute {
    MonteCarlo,
    Recursive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Total degree of the polynomial sieve in `(s, a)`.
    pub degree: usize,
    /// Ridge penalty `λ`, fixed in the sample size so the shrinkage vanishes
    /// as `n` grows.
    pub ridge: f64,
    /// Gauss–Hermite nodes used for `E_{π^θ}[· | s]`.
    pub quad_nodes: usize,
    pub mu_route: MuRoute,
    pub dq_route: DerivativeRoute,
    pub dmu_route: DerivativeRoute,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            degree: 2,
            ridge: 1e-6,
            quad_nodes: QuadratureRule::DEFAULT_NODES,
            mu_route: MuRoute::Forward,
            dq_route: DerivativeRoute::Recursive,
            dmu_route: DerivativeRoute::Recursive,
        }
    }
}

impl FitConfig {
    pub fn feature_map(&self, state_dim: usize) -> FeatureMap {
        FeatureMap::new(state_dim + 1, self.degree, true)
    }

    pub fn lambda(&self) -> f64 {
        self.ridge
    }

    pub fn rule(&self) -> QuadratureRule {
        QuadratureRule::gauss_hermite(self.quad_nodes)
    }
}

fn eval_scalar(model: &StepModel, s: &[f64], a: f64) -> f64 {
    match model {
        StepModel::Zero => 0.0,
        StepModel::Ridge(m) => m.predict_scalar(&input(s, a)),
        StepModel::RatioScore => unreachable!(),
    }
}

fn eval_vector(model: &StepModel, s: &[f64], a: f64, out: &mut [f64]) {
    match model {
        StepModel::Zero => out.fill(0.0),
        StepModel::Ridge(m) => m.predict(&input(s, a), out),
        StepModel::RatioScore => unreachable!("closed-form steps are evaluated from trajectory terms"),
    }
}

fn solve_step(eqs: NormalEquations, lambda: f64, j: usize) -> Result<StepModel> {
    eqs.solve(lambda).map(StepModel::Ridge).map_err(|e| e.at_step(j))
}

/// Backward fitted-Q evaluation: regress `r_j + v̂_{j+1}(s_{j+1})` on
/// `(s_j, a_j)` for `j = H-1, …, 0`, where `v̂_{j+1}` integrates `q̂_{j+1}`
/// over the target policy.
pub fn fit_q_backward(
    data: &Dataset,
    target: &dyn DifferentiablePolicy,
    fmap: &FeatureMap,
    lambda: f64,
    rule: &QuadratureRule,
) -> Result<Vec<StepModel>> {
    let h = data.horizon();
    let mut models = vec![StepModel::Zero; h];
    let mut nodes = ActionNodes::new();
    for j in (0..h).rev() {
        let mut eqs = NormalEquations::new(fmap.clone(), 1);
        for tr in data {
            let next_v = if j + 1 < h {
                let s = tr.state(j + 1);
                target.action_measure(s, rule, &mut nodes);
                nodes.iter().map(|&(a, w)| w * eval_scalar(&models[j + 1], s, a)).sum()
            } else {
                0.0
            };
            eqs.push(&input(tr.state(j), tr.action(j)), &[tr.reward(j) + next_v]);
        }
        models[j] = solve_step(eqs, lambda, j)?;
    }
    Ok(models)
}

/// `μ̂_j` from `E[ν_{0:j} | s_j, a_j]`.
pub fn fit_mu_mc(data: &Dataset, terms: &[TrajectoryTerms], fmap: &FeatureMap, lambda: f64) -> Result<Vec<StepModel>> {
    (0..data.horizon())
        .into_par_iter()
        .map(|j| {
            let mut eqs = NormalEquations::new(fmap.clone(), 1);
            for (tr, tt) in data.iter().zip(terms) {
                eqs.push(&input(tr.state(j), tr.action(j)), &[tt.ratios.prefix_log(j).exp()]);
            }
            solve_step(eqs, lambda, j)
        })
        .collect()
}

/// `μ̂_j` by the forward recursion `μ_j = E[μ_{j-1} ν̃_j | s_j, a_j]`,
/// starting from `μ̂_0 = fit of ν̃_0`.
pub fn fit_mu_forward(
    data: &Dataset,
    terms: &[TrajectoryTerms],
    fmap: &FeatureMap,
    lambda: f64,
) -> Result<Vec<StepModel>> {
    let h = data.horizon();
    let mut models: Vec<StepModel> = Vec::with_capacity(h);
    for j in 0..h {
        let mut eqs = NormalEquations::new(fmap.clone(), 1);
        for (tr, tt) in data.iter().zip(terms) {
            let prev = match j {
                0 => 1.0,
                _ => eval_scalar(&models[j - 1], tr.state(j - 1), tr.action(j - 1)),
            };
            eqs.push(&input(tr.state(j), tr.action(j)), &[prev * tt.ratios.step_ratio(j)]);
        }
        models.push(solve_step(eqs, lambda, j)?);
    }
    Ok(models)
}

/// Response `Σ_{t=j+1}^{H-1} r_t ν_{j+1:t} Σ_{ℓ=j+1}^{t} g_ℓ`, written to `out`.
/// Per-step terms `c_ℓ = ν_ℓ g_ℓ (G_ℓ − q̂_ℓ(s_ℓ, a_ℓ)) + E_{π^θ}[g q̂_ℓ | s_ℓ]`,
/// `H × dim`, where `G_ℓ = Σ_{t≥ℓ} r_t ν_{ℓ+1:t}` is the reweighted
/// reward-to-go. Given `s_ℓ`, `c_ℓ` has the same mean as `ν_ℓ g_ℓ G_ℓ` for
/// any `q̂`.
fn control_terms(
    tr: &crate::env::Trajectory,
    tt: &TrajectoryTerms,
    q_models: &[StepModel],
    target: &dyn DifferentiablePolicy,
    rule: &QuadratureRule,
    nodes: &mut ActionNodes,
) -> Vec<f64> {
    let (h, d) = (tr.horizon(), tt.dim());
    let mut out = vec![0.0; h * d];
    let mut g: Buf = SmallVec::from_elem(0.0, d);
    let mut to_go = 0.0;
    for l in (0..h).rev() {
        if l + 1 < h {
            to_go *= tt.ratios.step_ratio(l + 1);
        }
        to_go += tr.reward(l);
        let (s, a) = (tr.state(l), tr.action(l));
        let c = &mut out[l * d..(l + 1) * d];
        let w = tt.ratios.step_ratio(l) * (to_go - eval_scalar(&q_models[l], s, a));
        for (ck, gk) in c.iter_mut().zip(tt.score(l)) {
            *ck = w * gk;
        }
        target.action_measure(s, rule, nodes);
        for &(x, wx) in nodes.iter() {
            target.score(s, x, &mut g);
            let qx = wx * eval_scalar(&q_models[l], s, x);
            for (ck, gk) in c.iter_mut().zip(&g) {
                *ck += qx * gk;
            }
        }
    }
    out
}

/// `Σ_{ℓ>j} ν_{j+1:ℓ-1} c_ℓ`, whose conditional mean given `(s_j, a_j)` is
/// `d^q_j`.
fn dq_response(tt: &TrajectoryTerms, terms: &[f64], j: usize, out: &mut [f64]) {
    out.fill(0.0);
    let d = out.len();
    for l in j + 1..tt.ratios.len() {
        let w = tt.ratios.cum_log(j + 1, l - 1).exp();
        for (o, c) in out.iter_mut().zip(&terms[l * d..(l + 1) * d]) {
            *o += w * c;
        }
    }
}

/// `d̂q_j` from the Monte-Carlo representation
/// `d^q_j = E[Σ_{t>j} r_t ν_{j+1:t} Σ_{ℓ=j+1}^{t} g_ℓ | s_j, a_j]`,
/// rearranged by reward-to-go, with `q_models` as a control variate. The
/// control changes the variance only, so the fit stays consistent even when
/// `q̂` is wrong.
pub fn fit_dq_mc(
    data: &Dataset,
    terms: &[TrajectoryTerms],
    q_models: &[StepModel],
    target: &dyn DifferentiablePolicy,
    fmap: &FeatureMap,
    lambda: f64,
    rule: &QuadratureRule,
) -> Result<Vec<StepModel>> {
    let h = data.horizon();
    let d = terms[0].dim();
    let centered: Vec<Vec<f64>> = data
        .trajectories()
        .par_iter()
        .zip(terms)
        .map_init(ActionNodes::new, |nodes, (tr, tt)| control_terms(tr, tt, q_models, target, rule, nodes))
        .collect();
    (0..h)
        .into_par_iter()
        .map(|j| {
            if j + 1 == h {
                return Ok(StepModel::Zero);
            }
            let mut eqs = NormalEquations::new(fmap.clone(), d);
            let mut y = vec![0.0; d];
            for ((tr, tt), c) in data.iter().zip(terms).zip(&centered) {
                dq_response(tt, c, j, &mut y);
                eqs.push(&input(tr.state(j), tr.action(j)), &y);
            }
            solve_step(eqs, lambda, j)
        })
        .collect()
}

/// `d̂μ_j` from `d^μ_j = E[ν_{0:j} Σ_{ℓ≤j} g_ℓ | s_j, a_j]`.
pub fn fit_dmu_mc(data: &Dataset, terms: &[TrajectoryTerms], fmap: &FeatureMap, lambda: f64) -> Result<Vec<StepModel>> {
    let d = terms[0].dim();
    let cumulative: Vec<Vec<f64>> = terms.iter().map(TrajectoryTerms::cumulative_scores).collect();
    (0..data.horizon())
        .into_par_iter()
        .map(|j| {
            let mut eqs = NormalEquations::new(fmap.clone(), d);
            let mut y = vec![0.0; d];
            for ((tr, tt), cum) in data.iter().zip(terms).zip(&cumulative) {
                let w = tt.ratios.prefix_log(j).exp();
                for (k, yk) in y.iter_mut().enumerate() {
                    *yk = w * cum[j * d + k];
                }
                eqs.push(&input(tr.state(j), tr.action(j)), &y);
            }
            solve_step(eqs, lambda, j)
        })
        .collect()
}

/// Backward recursion for `d̂q`: `d̂q_{H-1} = 0`, and for `j < H-1` regress
/// `d̂v_{j+1}(s_{j+1})` on `(s_j, a_j)` with
/// `d̂v_j(s) = E_{π^θ}[d̂q_j + q̂_j g_j | s]`.
pub fn fit_dq_recursive(
    data: &Dataset,
    q_models: &[StepModel],
    target: &dyn DifferentiablePolicy,
    fmap: &FeatureMap,
    lambda: f64,
    rule: &QuadratureRule,
) -> Result<Vec<StepModel>> {
    let h = data.horizon();
    let d = target.num_params();
    let mut models = vec![StepModel::Zero; h];
    let mut nodes = ActionNodes::new();
    let mut g: Buf = SmallVec::from_elem(0.0, d);
    let mut dqa: Buf = SmallVec::from_elem(0.0, d);
    let mut y = vec![0.0; d];
    for j in (0..h.saturating_sub(1)).rev() {
        let mut eqs = NormalEquations::new(fmap.clone(), d);
        for tr in data {
            let s = tr.state(j + 1);
            target.action_measure(s, rule, &mut nodes);
            y.fill(0.0);
            for &(a, w) in &nodes {
                let qa = eval_scalar(&q_models[j + 1], s, a);
                eval_vector(&models[j + 1], s, a, &mut dqa);
                target.score(s, a, &mut g);
                for k in 0..d {
                    y[k] += w * (dqa[k] + qa * g[k]);
                }
            }
            eqs.push(&input(tr.state(j), tr.action(j)), &y);
        }
        models[j] = solve_step(eqs, lambda, j)?;
    }
    Ok(models)
}

/// Forward recursion for `d̂μ`: `d̂μ_0 = ν̃_0 g_0` exactly, and for `j ≥ 1`
/// regress `ν̃_j d̂μ_{j-1}(s_{j-1}, a_{j-1}) + μ̂_j(s_j, a_j) g_j` on `(s_j, a_j)`.
pub fn fit_dmu_recursive(
    data: &Dataset,
    terms: &[TrajectoryTerms],
    mu_models: &[StepModel],
    fmap: &FeatureMap,
    lambda: f64,
) -> Result<Vec<StepModel>> {
    let h = data.horizon();
    let d = terms[0].dim();
    let mut models = Vec::with_capacity(h);
    models.push(StepModel::RatioScore);
    // d̂μ_{j-1} at each trajectory's observed (s_{j-1}, a_{j-1})
    let mut prev: Vec<f64> = terms
        .iter()
        .flat_map(|tt| {
            let ratio = tt.ratios.step_ratio(0);
            tt.score(0).iter().map(move |g| ratio * g).collect::<Vec<_>>()
        })
        .collect();
    let mut y = vec![0.0; d];
    for j in 1..h {
        let mut eqs = NormalEquations::new(fmap.clone(), d);
        for (i, (tr, tt)) in data.iter().zip(terms).enumerate() {
            let (s, a) = (tr.state(j), tr.action(j));
            let ratio = tt.ratios.step_ratio(j);
            let mu = eval_scalar(&mu_models[j], s, a);
            for k in 0..d {
                y[k] = ratio * prev[i * d + k] + mu * tt.score(j)[k];
            }
            eqs.push(&input(s, a), &y);
        }
        let model = solve_step(eqs, lambda, j)?;
        for (i, tr) in data.iter().enumerate() {
            eval_vector(&model, tr.state(j), tr.action(j), &mut prev[i * d..(i + 1) * d]);
        }
        models.push(model);
    }
    Ok(models)
}

/// Fit `q̂, μ̂, d̂q, d̂μ` on `data` with the routes selected in `config`.
pub fn fit_nuisances(
    data: &Dataset,
    target: &dyn DifferentiablePolicy,
    behavior: &dyn Policy,
    config: &FitConfig,
) -> Result<NuisanceSet> {
    let terms = data.terms(target, behavior);
    let fmap = config.feature_map(data.state_dim());
    let lambda = config.lambda();
    let rule = config.rule();
    let q = fit_q_backward(data, target, &fmap, lambda, &rule)?;
    let mu = match config.mu_route {
        MuRoute::MonteCarlo => fit_mu_mc(data, &terms, &fmap, lambda)?,
        MuRoute::Forward => fit_mu_forward(data, &terms, &fmap, lambda)?,
    };
    let dq = match config.dq_route {
        DerivativeRoute::MonteCarlo => fit_dq_mc(data, &terms, &q, target, &fmap, lambda, &rule)?,
        DerivativeRoute::Recursive => fit_dq_recursive(data, &q, target, &fmap, lambda, &rule)?,
    };
    let dmu = match config.dmu_route {
        DerivativeRoute::MonteCarlo => fit_dmu_mc(data, &terms, &fmap, lambda)?,
        DerivativeRoute::Recursive => fit_dmu_recursive(data, &terms, &mu, &fmap, lambda)?,
    };
    NuisanceSet::new(data.horizon(), target, rule)
        .with_behavior(behavior)
        .with_family(Family::Q, q)?
        .with_family(Family::Mu, mu)?
        .with_family(Family::Dq, dq)?
        .with_family(Family::Dmu, dmu)
}
